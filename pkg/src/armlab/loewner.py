"""Discretized Loewner chains built from exact elementary slit maps.

The driving function is taken piecewise constant on each capacity step, so
each step is solved in closed form by the square-root slit map.  Forward
evaluation, inverse curve tracing, boundary-point flow with swallowing
detection, and interior-point flow with derivative and angle tracking are
all compositions of these elementary maps.

Conventions
-----------
* Branch: the root with nonnegative imaginary part, ties broken so points
  right/left of the driving value stay right/left.
* Step i covers [t_{i-1}, t_i) and uses the driving value W(t_{i-1}).
* A swallowed left boundary point continues as the image of the leftmost
  real hull point (clamp-to-driving rule); mirrored on the right.
* Tracing degrades gracefully near the real axis: imaginary parts are
  clamped to >= 0 between inverse steps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError

__all__ = [
    "capacity_grid",
    "elementary_slit_step",
    "slit_inverse_step",
    "real_step_left",
    "real_step_right",
    "real_step_derivative",
    "DrivingPath",
    "HullMap",
    "BoundaryTracker",
    "InteriorTracker",
    "evolve_boundary_point",
    "evolve_interior_point",
    "trace",
]

DEFAULT_SWALLOW_TOL = 1e-9


def capacity_grid(dt: float, T: float) -> np.ndarray:
    """Uniform capacity-time grid from 0 to T; the last step may be short."""
    if not 0 < dt <= T:
        raise DomainError(f"need 0 < dt <= T, got dt={dt}, T={T}")
    n_steps = int(np.ceil(T / dt - 1e-12))
    times = dt * np.arange(n_steps + 1, dtype=float)
    times[-1] = min(times[-1], T)
    if times[-1] < T - 1e-12 * max(1.0, T):
        times = np.append(times, T)
    return times


def _upper_sqrt(a: np.ndarray, re_sign: np.ndarray) -> np.ndarray:
    """Square root of `a` in the closed upper half-plane.

    Ties (real nonnegative a) take the sign of `re_sign` so real points
    map to the correct side of the slit.
    """
    s = np.sqrt(a.astype(complex))
    s = np.where(s.imag < 0, -s, s)
    flip = (s.imag == 0) & (re_sign < 0)
    return np.where(flip, -s, s)


def elementary_slit_step(dt: float, w: float, z):
    """Forward map of one step: w + sqrt((z-w)^2 + 4*dt), upper branch.

    Maps the upper half-plane minus the vertical slit of capacity dt at w
    onto the upper half-plane; the slit tip preimage w + 2i*sqrt(dt) maps
    to w.
    """
    if dt < 0:
        raise DomainError("dt must be >= 0")
    zeta = np.asarray(z, dtype=complex) - w
    out = w + _upper_sqrt(zeta * zeta + 4.0 * dt, zeta.real)
    return out if out.ndim else complex(out)


def slit_inverse_step(dt: float, w: float, z):
    """Inverse of elementary_slit_step: w + sqrt((z-w)^2 - 4*dt)."""
    if dt < 0:
        raise DomainError("dt must be >= 0")
    zeta = np.asarray(z, dtype=complex) - w
    out = w + _upper_sqrt(zeta * zeta - 4.0 * dt, zeta.real)
    return out if out.ndim else complex(out)


def real_step_left(y, w, dt):
    """One exact step for a real point tracked on the left of the driving.

    Arguments may be scalars or arrays. Points at or right of w are clamped
    to w first (swallowed-point convention: image of the leftmost real hull
    point).
    """
    gap = np.minimum(y, w) - w
    return w - np.sqrt(gap * gap + 4.0 * dt)


def real_step_right(y, w, dt):
    """Mirror of real_step_left for points tracked on the right."""
    gap = np.maximum(y, w) - w
    return w + np.sqrt(gap * gap + 4.0 * dt)


def real_step_derivative(y_old, y_new, w):
    """Per-step derivative factor h'(y) = (y-w)/(h(y)-w) for real points."""
    return (y_old - w) / (y_new - w)


@dataclass
class DrivingPath:
    """Time-gridded sample of the driving function."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.ndim != 1 or self.times.shape != self.values.shape:
            raise DomainError("times and values must be 1-d arrays of equal length")
        if self.times[0] != 0.0:
            raise DomainError("driving grid must start at t = 0")
        if np.any(np.diff(self.times) <= 0):
            raise DomainError("times must be strictly increasing")
        if not (np.all(np.isfinite(self.times)) and np.all(np.isfinite(self.values))):
            raise DomainError("driving path must be finite")

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    def step_sizes(self) -> np.ndarray:
        return np.diff(self.times)

    def step_values(self) -> np.ndarray:
        """Driving value used on each step (left endpoint)."""
        return self.values[:-1]

    @classmethod
    def zero(cls, dt: float, T: float) -> "DrivingPath":
        t = capacity_grid(dt, T)
        return cls(t, np.zeros_like(t))


@dataclass
class HullMap:
    """Ordered composition of elementary slit maps representing g_t."""

    dts: np.ndarray
    ws: np.ndarray

    def __post_init__(self):
        self.dts = np.asarray(self.dts, dtype=float)
        self.ws = np.asarray(self.ws, dtype=float)
        if self.dts.shape != self.ws.shape:
            raise DomainError("dts and ws must have equal length")
        if np.any(self.dts < 0):
            raise DomainError("capacity increments must be >= 0")
        # zero-capacity steps are dropped silently
        keep = self.dts > 0
        if not np.all(keep):
            self.dts = self.dts[keep]
            self.ws = self.ws[keep]

    @classmethod
    def from_driving(cls, driving: DrivingPath) -> "HullMap":
        return cls(driving.step_sizes(), driving.step_values())

    @property
    def total_capacity(self) -> float:
        return float(self.dts.sum())

    def times(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.dts)])

    def forward(self, z):
        """g_t(z) by left-to-right composition of the elementary steps."""
        scalar = np.ndim(z) == 0
        out = np.atleast_1d(np.asarray(z, dtype=complex))
        for dt, w in zip(self.dts, self.ws):
            out = np.atleast_1d(elementary_slit_step(dt, w, out))
        return complex(out[0]) if scalar else out

    def forward_with_derivative(self, z):
        """(g_t(z), g_t'(z)) with the derivative as a per-step product."""
        scalar = np.ndim(z) == 0
        out = np.atleast_1d(np.asarray(z, dtype=complex))
        deriv = np.ones_like(out)
        for dt, w in zip(self.dts, self.ws):
            new = np.atleast_1d(elementary_slit_step(dt, w, out))
            deriv = deriv * (out - w) / (new - w)
            out = new
        if scalar:
            return complex(out[0]), complex(deriv[0])
        return out, deriv

    def point_at(self, k: int) -> complex:
        """Curve point after step k (1-based)."""
        _, pts = trace(self, np.array([k]))
        return complex(pts[0])


def trace(hull: HullMap, sample_steps: Optional[np.ndarray] = None):
    """Polyline of curve points.

    Returns (times, points). `sample_steps` selects the (1-based) step
    indices to evaluate; default every step. All requested points are
    pulled back together in one reverse sweep over the steps, so the cost
    is O(steps) map evaluations on arrays of the still-active points.
    """
    n = len(hull.dts)
    if sample_steps is None:
        sample_steps = np.arange(1, n + 1)
    sample_steps = np.asarray(sample_steps, dtype=int)
    if len(sample_steps) == 0:
        return np.empty(0), np.empty(0, dtype=complex)
    if sample_steps.min() < 1 or sample_steps.max() > n:
        raise DomainError("sample steps out of range")
    order = np.argsort(sample_steps, kind="stable")
    ks = sample_steps[order]
    pts = np.asarray(hull.ws[ks - 1], dtype=complex).copy()
    # pull every point at step k back through steps k, k-1, ..., 1
    for i in range(int(ks.max()) - 1, -1, -1):
        active = ks >= i + 1
        z = slit_inverse_step(hull.dts[i], hull.ws[i], pts[active])
        z = np.where(z.imag < 0, z.real + 0j, z)
        pts[active] = z
    out = np.empty_like(pts)
    out[order] = pts
    times = hull.times()
    return times[sample_steps], out


@dataclass
class BoundaryTracker:
    """Flow of a real boundary point under the chain."""

    y0: float
    times: np.ndarray
    path: np.ndarray
    swallowed_at: Optional[float] = None
    side: str = "left"
    starting_point: bool = False
    derivative: Optional[np.ndarray] = None

    @property
    def swallowed(self) -> bool:
        return self.swallowed_at is not None


@dataclass
class InteriorTracker:
    """Flow of an interior point: images, |g'|, angle, swallowing time."""

    z0: complex
    times: np.ndarray
    path: np.ndarray
    abs_derivative: np.ndarray
    theta: np.ndarray
    swallowed_at: Optional[float] = None

    @property
    def swallowed(self) -> bool:
        return self.swallowed_at is not None


def evolve_boundary_point(y0: float, driving: DrivingPath,
                          side: str = "auto",
                          track_derivative: bool = False) -> BoundaryTracker:
    """Evolve a real point under the chain with swallowing detection.

    The update is the exact elementary slit map on the point's side of the
    driving value. Swallowing is declared at the first step whose driving
    value reaches or crosses the tracked image; from then on the tracker
    follows the image of the relevant extreme real hull point. A point
    starting exactly at W_0 is flagged as the starting point and pinned
    to the hull-edge flow on the requested side (left by default).
    """
    y0 = float(y0)
    w0 = float(driving.values[0])
    starting = False
    if side == "auto":
        if y0 < w0:
            side = "left"
        elif y0 > w0:
            side = "right"
        else:
            side = "left"
            starting = True
    if side not in ("left", "right"):
        raise DomainError("side must be 'left', 'right', or 'auto'")

    dts = driving.step_sizes()
    wv = driving.step_values()
    n = len(dts)
    path = np.empty(n + 1)
    path[0] = y0
    deriv = np.ones(n + 1) if track_derivative else None
    swallowed_at = 0.0 if starting else None
    y = y0
    left = side == "left"
    for i in range(n):
        w, dt = wv[i], dts[i]
        crossed = (y >= w) if left else (y <= w)
        if crossed and swallowed_at is None:
            swallowed_at = float(driving.times[i])
        y_new = real_step_left(y, w, dt) if left else real_step_right(y, w, dt)
        if deriv is not None:
            if crossed or swallowed_at is not None:
                deriv[i + 1] = 0.0
            else:
                deriv[i + 1] = deriv[i] * real_step_derivative(y, y_new, w)
        y = float(y_new)
        path[i + 1] = y
    return BoundaryTracker(y0=y0, times=driving.times.copy(), path=path,
                           swallowed_at=swallowed_at, side=side,
                           starting_point=starting, derivative=deriv)


def evolve_interior_point(z0: complex, driving: DrivingPath,
                          swallow_tol: float = DEFAULT_SWALLOW_TOL) -> InteriorTracker:
    """Evolve an interior point; track |g'|, the angle to the driving value,
    and the swallowing time.

    Swallowing is declared when the image gap |g_t(z) - W_t| falls below
    `swallow_tol` (fjord pinching collapses this gap exponentially fast, so
    the detection is insensitive to the exact tolerance). The tracker state
    freezes after swallowing.
    """
    z0 = complex(z0)
    if z0.imag <= 0:
        raise DomainError("interior point must have positive imaginary part")
    dts = driving.step_sizes()
    wv = driving.step_values()
    n = len(dts)
    path = np.empty(n + 1, dtype=complex)
    absd = np.empty(n + 1)
    theta = np.empty(n + 1)
    path[0] = z0
    absd[0] = 1.0
    theta[0] = np.angle(z0 - driving.values[0])
    swallowed_at = None
    g = z0
    d = 1.0
    for i in range(n):
        w, dt = wv[i], dts[i]
        if swallowed_at is None and abs(g - w) < swallow_tol:
            swallowed_at = float(driving.times[i])
        if swallowed_at is None:
            g_new = complex(elementary_slit_step(dt, w, g))
            if not (g_new.imag > 0.0) or np.isnan(g_new.real):
                # image landed on or under the real axis: direct hit
                swallowed_at = float(driving.times[i])
            else:
                d *= abs(g - w) / abs(g_new - w)
                g = g_new
        path[i + 1] = g
        absd[i + 1] = d
        theta[i + 1] = np.angle(g - driving.values[i + 1])
    return InteriorTracker(z0=z0, times=driving.times.copy(), path=path,
                           abs_derivative=absd, theta=theta,
                           swallowed_at=swallowed_at)
