"""Driving-path samplers for SLE_kappa and SLE_kappa(rho) and the two
martingale observables attached to boundary / interior force points.

Plain chains are driven by sqrt(kappa) * B_t sampled on a uniform capacity
grid. Force-point chains use Euler-Maruyama for the driving and the exact
elementary slit map for the force points, which keeps the ordering between
W and each V exact within every step. Near-collisions trigger local halving
of the step (up to 20 levels) before a collision is declared; a declared
collision ends the path with a recorded reason rather than raising.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import rng as rng_mod
from .errors import DomainError
from .loewner import (
    DrivingPath,
    capacity_grid,
    elementary_slit_step,
    real_step_left,
    real_step_right,
    real_step_derivative,
)

__all__ = [
    "SleParams",
    "ForcePointRun",
    "simulate_plain",
    "simulate_with_force_points",
    "martingale_boundary",
    "martingale_interior",
    "martingale_boundary_path",
    "martingale_interior_path",
    "sample_boundary_martingale",
    "sample_interior_martingale",
    "sample_force_point_endpoints",
    "special_rho_attract",
    "special_rho_avoid",
]

MAX_HALVINGS = 20


def special_rho_attract(kappa: float) -> float:
    """Threshold kappa/2 - 4: at or below it the curve converges to the
    force point in finite time."""
    return kappa / 2.0 - 4.0


def special_rho_avoid(kappa: float) -> float:
    """Threshold kappa/2 - 2: at or above it the curve never hits the
    interval beyond the force point."""
    return kappa / 2.0 - 2.0


@dataclass
class SleParams:
    """Parameters of an SLE_kappa(rhoL; rhoR; rhoI) process.

    A rho of 0 means the corresponding force point is absent.
    """

    kappa: float
    rho_left: float = 0.0
    rho_right: float = 0.0
    rho_interior: float = 0.0
    x_left: float = 0.0
    x_right: float = 0.0
    z: complex = 0j

    def __post_init__(self):
        if self.kappa <= 0:
            raise DomainError("kappa must be positive")
        if self.rho_left and self.rho_left <= -2:
            raise DomainError("rho_left must be > -2 when present")
        if self.rho_right and self.rho_right <= -2:
            raise DomainError("rho_right must be > -2 when present")
        if self.rho_left and self.x_left > 0:
            raise DomainError("x_left must be <= 0")
        if self.rho_right and self.x_right < 0:
            raise DomainError("x_right must be >= 0")
        if self.rho_interior and complex(self.z).imag <= 0:
            raise DomainError("interior force point must lie in the upper half-plane")

    @property
    def has_left(self) -> bool:
        return self.rho_left != 0.0

    @property
    def has_right(self) -> bool:
        return self.rho_right != 0.0

    @property
    def has_interior(self) -> bool:
        return self.rho_interior != 0.0


@dataclass
class ForcePointRun:
    """Driving path plus force-point trajectories and termination record."""

    driving: DrivingPath
    v_left: Optional[np.ndarray] = None
    v_right: Optional[np.ndarray] = None
    v_interior: Optional[np.ndarray] = None
    reason: str = "horizon"          # horizon | collision-left | collision-right | interior-swallowed
    terminated_at: Optional[float] = None

    def to_csv(self) -> str:
        """Path dump with columns t, W, VL, VR, Re VI, Im VI.

        Absent force points leave their columns empty.
        """
        lines = ["t,w,vl,vr,re_vi,im_vi"]
        for i, (t, w) in enumerate(zip(self.driving.times,
                                       self.driving.values)):
            vl = f"{self.v_left[i]:.12g}" if self.v_left is not None else ""
            vr = f"{self.v_right[i]:.12g}" if self.v_right is not None else ""
            if self.v_interior is not None:
                re_vi = f"{self.v_interior[i].real:.12g}"
                im_vi = f"{self.v_interior[i].imag:.12g}"
            else:
                re_vi = im_vi = ""
            lines.append(f"{t:.12g},{w:.12g},{vl},{vr},{re_vi},{im_vi}")
        return "\n".join(lines) + "\n"


def simulate_plain(kappa: float, dt: float, T: float, gen) -> DrivingPath:
    """Sample W on the uniform capacity grid with Var(increment) = kappa*dt."""
    if kappa < 0:
        raise DomainError("kappa must be >= 0")
    times = capacity_grid(dt, T)
    steps = np.diff(times)
    incs = np.sqrt(kappa * steps) * rng_mod.normals(gen, len(steps))
    values = np.concatenate([[0.0], np.cumsum(incs)])
    return DrivingPath(times, values)


def _drift(params: SleParams, w, vl, vr, vi) -> float:
    d = 0.0
    if params.has_left:
        d += params.rho_left / (w - vl)
    if params.has_right:
        d += params.rho_right / (w - vr)
    if params.has_interior:
        d += (params.rho_interior / (w - vi)).real
    return d


def simulate_with_force_points(params: SleParams, dt: float, T: float, gen,
                               collision_tol_factor: float = 1e-6) -> ForcePointRun:
    """Simulate the driving with up to three force points.

    Euler-Maruyama for W; each V follows the exact slit-map flow of the
    step. A tentative step landing within collision_tol = factor*sqrt(dt)
    of a force point is redone as two half steps, recursively up to
    MAX_HALVINGS levels, then declared a collision. With all rho equal to
    0 the sampler consumes the stream exactly like simulate_plain.
    """
    has_any = params.has_left or params.has_right or params.has_interior
    if not has_any:
        # bit-identical reduction to the plain sampler
        return ForcePointRun(driving=simulate_plain(params.kappa, dt, T, gen))

    grid = capacity_grid(dt, T)
    n = len(grid) - 1
    times = [0.0]
    wpath = [0.0]
    vl_path = [params.x_left] if params.has_left else None
    vr_path = [params.x_right] if params.has_right else None
    vi_path = [complex(params.z)] if params.has_interior else None

    sqrt_kappa = np.sqrt(params.kappa)
    state = {
        "w": 0.0,
        "vl": params.x_left if params.has_left else None,
        "vr": params.x_right if params.has_right else None,
        "vi": complex(params.z) if params.has_interior else None,
    }
    reason = "horizon"
    terminated_at: Optional[float] = None

    # collision tolerance pinned to the top-level step scale; halving
    # refines the hit time but must not shrink the detection window
    tol = collision_tol_factor * np.sqrt(dt)

    def try_step(h: float, depth: int, dw: Optional[float] = None) -> Optional[str]:
        """Advance state by capacity h, halving near collisions.

        A rejected step is replayed as two half steps on the same Brownian
        increment (bridge refinement), so the noise is never re-rolled and
        the recursion either pins the crossing or legitimately evades it.
        Returns a collision reason or None; mutates `state` only on success.
        """
        w, vl, vr, vi = state["w"], state["vl"], state["vr"], state["vi"]
        if dw is None:
            dw = sqrt_kappa * np.sqrt(h) * rng_mod.normals(gen, 1)[0]
        w_new = w + dw + _drift(params, w, vl, vr, vi) * h
        vl_new = real_step_left(vl, w, h) if vl is not None else None
        vr_new = real_step_right(vr, w, h) if vr is not None else None
        vi_new = complex(elementary_slit_step(h, w, vi)) if vi is not None else None

        hit = None
        if vl_new is not None and w_new - vl_new < tol:
            hit = "collision-left"
        if hit is None and vr_new is not None and vr_new - w_new < tol:
            hit = "collision-right"
        if hit is None and vi_new is not None and abs(vi_new - w_new) < tol:
            hit = "interior-swallowed"
        if hit is not None:
            if depth < MAX_HALVINGS:
                bridge = 0.5 * sqrt_kappa * np.sqrt(h) * rng_mod.normals(gen, 1)[0]
                dw1 = 0.5 * dw + bridge
                first = try_step(h / 2.0, depth + 1, dw1)
                if first is not None:
                    return first
                return try_step(h / 2.0, depth + 1, dw - dw1)
            return hit
        state.update(w=w_new, vl=vl_new, vr=vr_new, vi=vi_new)
        return None

    for i in range(n):
        h = grid[i + 1] - grid[i]
        failure = try_step(h, 0)
        if failure is not None:
            reason = failure
            terminated_at = float(grid[i])
            break
        times.append(float(grid[i + 1]))
        wpath.append(state["w"])
        if vl_path is not None:
            vl_path.append(state["vl"])
        if vr_path is not None:
            vr_path.append(state["vr"])
        if vi_path is not None:
            vi_path.append(state["vi"])

    driving = DrivingPath(np.array(times), np.array(wpath))
    return ForcePointRun(
        driving=driving,
        v_left=np.array(vl_path) if vl_path is not None else None,
        v_right=np.array(vr_path) if vr_path is not None else None,
        v_interior=np.array(vi_path, dtype=complex) if vi_path is not None else None,
        reason=reason,
        terminated_at=terminated_at,
    )


def martingale_boundary(w, y_left, d_left, y_right, d_right,
                        rho_left, rho_right, kappa):
    """Two-force-point observable from tracked images and derivatives.

    Arguments may be scalars or arrays. All factors must be positive
    (neither force point swallowed); the caller is responsible for
    masking swallowed states.
    """
    k = kappa
    return (
        np.power(d_left, rho_left * (rho_left + 4 - k) / (4 * k))
        * np.power(w - y_left, rho_left / k)
        * np.power(d_right, rho_right * (rho_right + 4 - k) / (4 * k))
        * np.power(y_right - w, rho_right / k)
        * np.power(y_right - y_left, rho_left * rho_right / (2 * k))
    )


def martingale_interior(w, g, abs_deriv, rho_interior, kappa):
    """One interior force-point observable from tracked image and |g'|."""
    k = kappa
    rho = rho_interior
    g = np.asarray(g, dtype=complex)
    return (
        np.power(abs_deriv, rho * (rho + 8 - 2 * k) / (8 * k))
        * np.power(g.imag, rho * rho / (8 * k))
        * np.power(np.abs(g - w), rho / k)
    )


def martingale_boundary_path(driving: DrivingPath, x_left: float, x_right: float,
                             rho_left: float, rho_right: float, kappa: float) -> np.ndarray:
    """Evaluate the boundary observable along one chain.

    Entries after either force point is swallowed are NaN (undefined).
    """
    if not (x_left < 0 < x_right):
        raise DomainError("need x_left < 0 < x_right")
    from .loewner import evolve_boundary_point

    left = evolve_boundary_point(x_left, driving, track_derivative=True)
    right = evolve_boundary_point(x_right, driving, track_derivative=True)
    m = martingale_boundary(driving.values, left.path, left.derivative,
                            right.path, right.derivative,
                            rho_left, rho_right, kappa)
    cut = len(driving.times)
    for trk in (left, right):
        if trk.swallowed:
            cut = min(cut, int(np.searchsorted(driving.times, trk.swallowed_at)))
    if cut < len(m):
        m[cut:] = np.nan
    return m


def martingale_interior_path(driving: DrivingPath, z: complex,
                             rho_interior: float, kappa: float) -> np.ndarray:
    """Evaluate the interior observable along one chain (NaN once swallowed)."""
    from .loewner import evolve_interior_point

    trk = evolve_interior_point(z, driving)
    m = martingale_interior(driving.values, trk.path, trk.abs_derivative,
                            rho_interior, kappa)
    if trk.swallowed:
        cut = int(np.searchsorted(driving.times, trk.swallowed_at))
        m[cut:] = np.nan
    return m


# ---------------------------------------------------------------------------
# Vectorized batches for the statistical checks. One replica per lane;
# lanes run in lockstep on the uniform grid.
# ---------------------------------------------------------------------------

def _batch_plain_final_state(kappa, dt, n_steps, n_replicas, gen, reals, interiors):
    """Drive n_replicas plain chains; evolve tracked points alongside.

    reals: list of (initial value, side) pairs; interiors: list of complex.
    Returns (W_final, real states [(Y, D, alive)], interior states
    [(G, absD, alive)]).
    """
    w = np.zeros(n_replicas)
    r_states = [
        (np.full(n_replicas, y0), np.ones(n_replicas), np.ones(n_replicas, bool), side)
        for (y0, side) in reals
    ]
    i_states = [
        (np.full(n_replicas, complex(z0)), np.ones(n_replicas), np.ones(n_replicas, bool))
        for z0 in interiors
    ]
    sq = np.sqrt(kappa * dt)
    for _ in range(n_steps):
        w_new = w + sq * rng_mod.normals(gen, n_replicas)
        for (y, d, alive, side) in r_states:
            if side == "left":
                y_new = real_step_left(y, w, dt)
                crossed = w_new <= y_new
            else:
                y_new = real_step_right(y, w, dt)
                crossed = w_new >= y_new
            d *= np.where(alive, real_step_derivative(y, y_new, w), 1.0)
            alive &= ~crossed
            y[:] = y_new
        for (g, d, alive) in i_states:
            zeta = g - w
            s = np.sqrt(zeta * zeta + 4.0 * dt)
            s = np.where(s.imag < 0, -s, s)
            g_new = w + s
            step_ok = (g_new.imag > 0.0) & (np.abs(g_new - w_new) > 1e-12)
            d *= np.where(alive & step_ok, np.abs(zeta) / np.abs(g_new - w), 1.0)
            g[:] = np.where(alive & step_ok, g_new, g)
            alive &= step_ok
        w = w_new
    return w, r_states, i_states


def sample_boundary_martingale(kappa, rho_left, rho_right, x_left, x_right,
                               t, dt, n_replicas, seed, replica=0,
                               barrier_factor=4.0):
    """Monte Carlo sample of the boundary observable at capacity t.

    Each lane freezes at the (adapted) barrier stopping time where a
    force-point image gap falls under barrier_factor step standard
    deviations, so the mean over all lanes targets M0 exactly by optional
    stopping; excluding stopped paths instead would bias the mean by the
    stopped M-mass. Returns (M0, values over all lanes, frozen_mask).
    """
    n_steps = int(round(t / dt))
    gen = rng_mod.stream(seed, replica)
    n = n_replicas
    b = barrier_factor * np.sqrt(kappa * dt)
    w = np.zeros(n)
    yl = np.full(n, float(x_left))
    yr = np.full(n, float(x_right))
    dl = np.ones(n)
    dr = np.ones(n)
    live = np.ones(n, bool)
    sq = np.sqrt(kappa * dt)
    for _ in range(n_steps):
        live &= (w - yl > b) & (yr - w > b)
        w_new = w + sq * rng_mod.normals(gen, n)
        yl2 = real_step_left(yl, w, dt)
        yr2 = real_step_right(yr, w, dt)
        fl = real_step_derivative(yl, yl2, w)
        fr = real_step_derivative(yr, yr2, w)
        yl = np.where(live, yl2, yl)
        yr = np.where(live, yr2, yr)
        dl *= np.where(live, fl, 1.0)
        dr *= np.where(live, fr, 1.0)
        w = np.where(live, w_new, w)
    vals = martingale_boundary(w, yl, dl, yr, dr, rho_left, rho_right, kappa)
    m0 = float(martingale_boundary(0.0, x_left, 1.0, x_right, 1.0,
                                   rho_left, rho_right, kappa))
    return m0, vals, ~live


def sample_interior_martingale(kappa, rho_interior, z, t, dt, n_replicas,
                               seed, replica=0, barrier_factor=4.0):
    """Monte Carlo sample of the interior observable at capacity t.

    Barrier freezing as in sample_boundary_martingale, applied to the
    image gap |g(z) - W|. Returns (M0, values, frozen_mask).
    """
    n_steps = int(round(t / dt))
    gen = rng_mod.stream(seed, replica)
    n = n_replicas
    b = barrier_factor * np.sqrt(kappa * dt)
    w = np.zeros(n)
    g = np.full(n, complex(z))
    d = np.ones(n)
    live = np.ones(n, bool)
    sq = np.sqrt(kappa * dt)
    for _ in range(n_steps):
        live &= np.abs(g - w) > b
        w_new = w + sq * rng_mod.normals(gen, n)
        zeta = g - w
        s = np.sqrt(zeta * zeta + 4.0 * dt)
        s = np.where(s.imag < 0, -s, s)
        g_new = w + s
        ok = live & (g_new.imag > 0)
        d *= np.where(ok, np.abs(zeta) / np.abs(g_new - w), 1.0)
        g = np.where(ok, g_new, g)
        w = np.where(ok, w_new, w)
        live = ok
    vals = martingale_interior(w, g, d, rho_interior, kappa)
    m0 = float(martingale_interior(0.0, complex(z), 1.0, rho_interior, kappa))
    return m0, vals, ~live


def sample_force_point_endpoints(params: SleParams, t, dt, n_replicas, seed,
                                 replica=0, collision_tol_factor=1e-6):
    """Batched Euler-Maruyama force-point runs without local substepping.

    Used by the statistical cross-checks; replicas that reach a collision
    are frozen and reported in the mask. Returns (W_t values, alive mask).
    """
    n_steps = int(round(t / dt))
    gen = rng_mod.stream(seed, replica)
    w = np.zeros(n_replicas)
    vl = np.full(n_replicas, params.x_left) if params.has_left else None
    vr = np.full(n_replicas, params.x_right) if params.has_right else None
    vi = np.full(n_replicas, complex(params.z)) if params.has_interior else None
    alive = np.ones(n_replicas, bool)
    tol = collision_tol_factor * np.sqrt(dt)
    sq = np.sqrt(params.kappa * dt)
    for _ in range(n_steps):
        drift = np.zeros(n_replicas)
        if vl is not None:
            drift += params.rho_left / (w - vl)
        if vr is not None:
            drift += params.rho_right / (w - vr)
        if vi is not None:
            drift += (params.rho_interior / (w - vi)).real
        w_new = w + sq * rng_mod.normals(gen, n_replicas) + drift * dt
        if vl is not None:
            vl_new = real_step_left(vl, w, dt)
            vl = np.where(alive, vl_new, vl)
        if vr is not None:
            vr_new = real_step_right(vr, w, dt)
            vr = np.where(alive, vr_new, vr)
        if vi is not None:
            vi_new = np.where(alive, _complex_step(vi, w, dt), vi)
            vi = vi_new
        w = np.where(alive, w_new, w)
        bad = np.zeros(n_replicas, bool)
        if vl is not None:
            bad |= (w - vl) < tol
        if vr is not None:
            bad |= (vr - w) < tol
        if vi is not None:
            bad |= np.abs(vi - w) < tol
        alive &= ~bad
    return w, alive


def _complex_step(g, w, dt):
    zeta = g - w
    s = np.sqrt(zeta * zeta + 4.0 * dt)
    s = np.where(s.imag < 0, -s, s)
    return w + s
