"""Boundary and interior crossing-event detection on simulated chains, and
Monte Carlo estimation of the event probabilities as functions of epsilon.

Two detectors are provided.

* ``tracker`` (default, used by the estimator): every stopping time is read
  off O(1)-per-step conformal trackers. Ray hits and swallowing times are
  exact crossings of tracked boundary images. Disc hits are declared when
  the image gap between the tip and the target drops below eps times the
  tracked derivative; the gap is comparable to the Euclidean distance
  within a factor of 4 on both sides, and the rule is scale-covariant, so
  fitted log-log slopes are unbiased while absolute constants may shift.
* ``trace``: stopping times from the traced polyline via exact
  segment-circle geometry (`first_hit_disc`, `surviving_arc`) and, for
  interior events past the first return, rasterized flood fill. Quadratic
  in the step count; meant for validation and small runs.

Simultaneous triggers inside one step resolve against the event (the
defining inequalities are strict).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import rng as rng_mod
from .errors import DomainError, EstimationError, GeometryError
from .loewner import (
    DrivingPath,
    HullMap,
    real_step_left,
    real_step_right,
    trace,
)

__all__ = [
    "BoundaryFamily",
    "InteriorFamily",
    "BoundaryEventSpec",
    "InteriorEventSpec",
    "StoppingRecord",
    "CircleArc",
    "first_hit_disc",
    "first_ray_hit_via_swallowing",
    "surviving_arc",
    "detect_boundary_event",
    "detect_interior_event",
    "EventEstimate",
    "estimate_event_probability",
]

DEFAULT_FILTER_DELTA = 0.1
DEFAULT_INTERIOR_RADIUS = 4.0
DEFAULT_HIT_FACTOR = 1.0
DEFAULT_PINCH_TOL = 1e-9


class BoundaryFamily(enum.Enum):
    ALPHA_ODD = "alpha_odd"      # bc 11, {tau_j < T_x}
    BETA_EVEN = "beta_even"      # bc 11, {sigma_j < T_x}
    GAMMA_ODD = "gamma_odd"      # bc 11, {tau_1 < T_u, sigma_j < T_x}
    ALPHA_EVEN = "alpha_even"    # bc 01, {tau_j < T_x}
    BETA_ODD = "beta_odd"        # bc 01, {sigma_j < T_x}
    GAMMA_EVEN = "gamma_even"    # bc 01, {sigma_1 = T_u, sigma_j < T_x}


class InteriorFamily(enum.Enum):
    ALPHA = "alpha"              # {tau_j < T_z}
    BETA = "beta"                # {sigma_j < T_z}
    GAMMA = "gamma"              # {sigma_1 = T_w, sigma_j < T_z}


_FAMILY_A = (BoundaryFamily.ALPHA_ODD, BoundaryFamily.BETA_EVEN,
             BoundaryFamily.GAMMA_ODD)
_FAMILY_B = (BoundaryFamily.ALPHA_EVEN, BoundaryFamily.BETA_ODD,
             BoundaryFamily.GAMMA_EVEN)


@dataclass(frozen=True)
class BoundaryEventSpec:
    """Geometry of one boundary crossing event."""

    family: BoundaryFamily
    j: int
    eps: float
    x: float
    y: float
    u: Optional[float] = None

    def __post_init__(self):
        if self.j < 1:
            raise GeometryError("need j >= 1")
        f, e, x, y, u = self.family, self.eps, self.x, self.y, self.u
        if f in _FAMILY_A:
            if not (y <= 0 < e <= x):
                raise GeometryError(
                    f"family {f.value} needs y <= 0 < eps <= x, got "
                    f"y={y}, eps={e}, x={x}")
            if f is BoundaryFamily.GAMMA_ODD:
                if u is None or not (e <= u <= x):
                    raise GeometryError(
                        f"gamma_odd needs eps <= u <= x, got u={u}")
        else:
            if not (y <= -e <= e <= x):
                raise GeometryError(
                    f"family {f.value} needs y <= -eps <= eps <= x, got "
                    f"y={y}, eps={e}, x={x}")
            if f is BoundaryFamily.GAMMA_EVEN:
                if u is None or not (y <= u <= -e):
                    raise GeometryError(
                        f"gamma_even needs y <= u <= -eps, got u={u}")

    @property
    def needs_sigma(self) -> int:
        if self.family in (BoundaryFamily.BETA_EVEN, BoundaryFamily.GAMMA_ODD,
                           BoundaryFamily.BETA_ODD, BoundaryFamily.GAMMA_EVEN):
            return self.j
        return self.j if self.family is BoundaryFamily.ALPHA_EVEN else max(self.j - 1, 0)

    @property
    def needs_tau(self) -> int:
        if self.family in (BoundaryFamily.ALPHA_ODD, BoundaryFamily.ALPHA_EVEN):
            return self.j
        if self.family in (BoundaryFamily.BETA_EVEN, BoundaryFamily.GAMMA_ODD):
            return self.j
        return max(self.j - 1, 0)


@dataclass(frozen=True)
class InteriorEventSpec:
    """Geometry of one interior crossing event (|z| = 1)."""

    family: InteriorFamily
    j: int
    eps: float
    z: complex
    y: float

    def __post_init__(self):
        if self.j < 1:
            raise GeometryError("need j >= 1")
        z = complex(self.z)
        if abs(abs(z) - 1.0) > 1e-9:
            raise GeometryError(f"need |z| = 1, got |z|={abs(z)}")
        if z.imag <= 0:
            raise GeometryError("z must lie in the open upper half-plane")
        if not 0 < self.eps < z.imag:
            raise GeometryError(
                f"need 0 < eps < Im z, got eps={self.eps}, Im z={z.imag}")
        if self.y > 0:
            raise GeometryError(f"need y <= 0, got y={self.y}")


@dataclass
class StoppingRecord:
    """Recorded tau/sigma times and how detection ended."""

    taus: list
    sigmas: list
    terminal: str  # "T_x" | "T_z" | "horizon" | "resolved"

    def check_interleaving(self, sigma_first: bool) -> bool:
        seq = []
        a, b = (self.sigmas, self.taus) if sigma_first else (self.taus, self.sigmas)
        for i in range(max(len(a), len(b))):
            if i < len(a):
                seq.append(a[i])
            if i < len(b):
                seq.append(b[i])
        return all(s <= t for s, t in zip(seq, seq[1:]))


@dataclass
class CircleArc:
    """Angular interval(s) of a circle, angles in radians."""

    center: complex
    radius: float
    start: float       # arc runs counterclockwise from start to end
    end: float
    tie_flag: bool = False

    def contains_angle(self, theta: float, tol: float = 0.0) -> bool:
        span = (self.end - self.start) % (2 * math.pi)
        if span == 0.0:
            span = 2 * math.pi
        off = (theta - self.start) % (2 * math.pi)
        return -tol <= off <= span + tol


# ---------------------------------------------------------------------------
# Trace geometry
# ---------------------------------------------------------------------------

def _segment_circle_params(p0, p1, center, radius):
    """Intersection parameters s in [0,1] of segments p0->p1 with a circle.

    Returns (seg_index, s) arrays sorted by segment then s.
    """
    d = p1 - p0
    f = p0 - center
    a = (d * d.conjugate()).real
    b = 2.0 * (f * d.conjugate()).real
    c = (f * f.conjugate()).real - radius * radius
    disc = b * b - 4.0 * a * c
    ok = (disc >= 0) & (a > 0)
    idx = []
    ss = []
    sq = np.sqrt(np.where(ok, disc, 0.0))
    for sign in (-1.0, 1.0):
        s = np.where(ok, (-b + sign * sq) / (2.0 * a), np.nan)
        good = ok & (s >= 0.0) & (s <= 1.0)
        idx.append(np.nonzero(good)[0])
        ss.append(s[good])
    seg = np.concatenate(idx)
    s = np.concatenate(ss)
    order = np.lexsort((s, seg))
    return seg[order], s[order]


def first_hit_disc(times, points, center, radius, from_time=0.0):
    """Earliest time at/after `from_time` the polyline meets the closed disc.

    Linear interpolation in time within the hitting segment. Returns None
    when the polyline never meets the disc.
    """
    times = np.asarray(times, dtype=float)
    points = np.asarray(points, dtype=complex)
    if len(points) != len(times):
        raise DomainError("times and points must align")
    if len(points) == 0:
        return None
    center = complex(center)
    inside = np.abs(points - center) <= radius
    live = times >= from_time
    hit_vertex = inside & live
    first = None
    if hit_vertex.any():
        first = float(times[np.argmax(hit_vertex)])
    if len(points) >= 2:
        seg, s = _segment_circle_params(points[:-1], points[1:], center, radius)
        if len(seg):
            t_hit = times[seg] + s * (times[seg + 1] - times[seg])
            t_hit = t_hit[t_hit >= from_time]
            if len(t_hit):
                t0 = float(t_hit.min())
                first = t0 if first is None else min(first, t0)
    return first


def first_hit_arc(times, points, arc: CircleArc, from_time=0.0,
                  angle_tol=0.0):
    """Earliest crossing of the polyline with a circular arc."""
    times = np.asarray(times, dtype=float)
    points = np.asarray(points, dtype=complex)
    if len(points) < 2:
        return None
    seg, s = _segment_circle_params(points[:-1], points[1:], arc.center, arc.radius)
    if not len(seg):
        return None
    pts = points[seg] + s * (points[seg + 1] - points[seg])
    ang = np.angle(pts - arc.center)
    t_hit = times[seg] + s * (times[seg + 1] - times[seg])
    keep = np.array([arc.contains_angle(a, tol=angle_tol) for a in ang])
    keep &= t_hit >= from_time
    if not keep.any():
        return None
    return float(t_hit[keep].min())


def surviving_arc(points, center, radius, tie_tol_factor=1e-4) -> CircleArc:
    """Connected component of the circle minus the polyline containing the
    rightmost circle point (angle 0).

    For a real center only the upper semicircle is considered (the lower
    half lies outside the closed half-plane); the component is then the
    angular interval from 0 up to the first polyline crossing. The
    `tie_flag` is set when a crossing lies within 1e-4 * radius of the
    anchor point.
    """
    points = np.asarray(points, dtype=complex)
    center = complex(center)
    boundary_case = abs(center.imag) < 1e-14
    angles = np.empty(0)
    if len(points) >= 2:
        seg, s = _segment_circle_params(points[:-1], points[1:], center, radius)
        if len(seg):
            pts = points[seg] + s * (points[seg + 1] - points[seg])
            angles = np.angle(pts - center)
    tie_tol = tie_tol_factor  # angular tolerance ~ (1e-4 * radius) / radius
    tie = bool(len(angles)) and bool(np.any(np.abs(angles) <= tie_tol))
    if boundary_case:
        pos = angles[(angles > tie_tol) & (angles < math.pi - 1e-12)]
        end = float(pos.min()) if len(pos) else math.pi
        return CircleArc(center, radius, 0.0, end, tie_flag=tie)
    if len(angles) == 0:
        return CircleArc(center, radius, 0.0, 2 * math.pi, tie_flag=tie)
    a = np.sort(np.mod(angles, 2 * math.pi))
    lo = a[a > tie_tol]
    hi = a[a < 2 * math.pi - tie_tol]
    end = float(lo.min()) if len(lo) else 2 * math.pi
    start = float(hi.max()) if len(hi) else 0.0
    if start == 0.0 and end >= 2 * math.pi:
        return CircleArc(center, radius, 0.0, 2 * math.pi, tie_flag=tie)
    return CircleArc(center, radius, start, end + 2 * math.pi * (end < start or start == end),
                     tie_flag=tie)


def first_ray_hit_via_swallowing(driving: DrivingPath, y: float,
                                 from_time: float = 0.0):
    """First time at/after `from_time` the curve touches the ray (-inf, y).

    Implemented through boundary-point swallowing: the touch times of the
    ray are the crossing times of the clamped left tracker started at y
    (after the first touch the tracker continues as the image of the
    leftmost swallowed point, so later crossings are touches of the
    unswallowed part of the ray).
    """
    if np.isneginf(y):
        return None
    dts = driving.step_sizes()
    wv = driving.step_values()
    yv = float(y)
    for i in range(len(dts)):
        w = wv[i]
        y_new = real_step_left(yv, w, dts[i])
        w_next = driving.values[i + 1]
        t_next = driving.times[i + 1]
        if w_next <= y_new and t_next >= from_time:
            return float(t_next)
        yv = float(y_new)
    return None


# ---------------------------------------------------------------------------
# Tracker state machines (vectorized over replicas)
# ---------------------------------------------------------------------------

class _BoundaryMachine:
    """Lane-parallel stopping-time automaton for one boundary event spec."""

    def __init__(self, spec: BoundaryEventSpec, n: int,
                 filter_delta: float = DEFAULT_FILTER_DELTA,
                 hit_factor: float = DEFAULT_HIT_FACTOR,
                 record_times: bool = False):
        self.spec = spec
        self.n = n
        self.t = np.zeros(n)
        self.sigma_first = spec.family in _FAMILY_B
        self.hit_factor = float(hit_factor)
        self.filter_delta = float(filter_delta)
        self.conf_radius = 1.0 / self.filter_delta
        self.conf_cap = 0.5 * self.conf_radius ** 2

        self.w = np.zeros(n)
        self.yx = np.full(n, float(spec.x))
        self.dx = np.ones(n)
        self.x_crossed = np.zeros(n, bool)
        self.y_img = np.full(n, float(spec.y))
        self.det_val = np.full(n, float(spec.y))
        self.armed = np.full(n, self.sigma_first)
        self.has_u = spec.u is not None
        if self.has_u:
            self.yu = np.full(n, float(spec.u))
            self.u_side_right = spec.family is BoundaryFamily.GAMMA_ODD
            self.u_crossed = np.zeros(n, bool)
            self.u_cross_step = np.full(n, -1, dtype=np.int64)
        self.conf_lo = np.full(n, -self.conf_radius)
        self.conf_hi = np.full(n, self.conf_radius)
        self.conf_failed = np.zeros(n, bool)
        self.conf_frozen = np.zeros(n, bool)
        # gamma_even extra filter: unit-disc exit before T_u and T_x
        self.g_even = spec.family is BoundaryFamily.GAMMA_EVEN
        if self.g_even:
            self.s1_lo = np.full(n, -1.0)
            self.s1_hi = np.full(n, 1.0)
            self.s_reached = np.zeros(n, bool)
            self.s_filter_ok = np.ones(n, bool)

        self.phase = np.zeros(n, dtype=np.int8)  # 0 await tau, 1 await sigma
        if self.sigma_first:
            self.phase[:] = 1
        self.tau_count = np.zeros(n, dtype=np.int16)
        self.sigma_count = np.zeros(n, dtype=np.int16)
        self.resolved = np.zeros(n, bool)
        self.occurred = np.zeros(n, bool)
        self.gamma_ok = np.ones(n, bool)
        self.step_idx = 0
        self.record_times = record_times
        if record_times:
            self.tau_times = [[] for _ in range(n)]
            self.sigma_times = [[] for _ in range(n)]
            self.terminal = ["horizon"] * n
        # degenerate geometry (eps = x) hits at time zero
        self._tau_checks(self.w)

    # -- helpers ----------------------------------------------------------

    def _mark_resolved(self, mask, occurred: bool, terminal: str):
        fresh = mask & ~self.resolved
        self.resolved |= fresh
        if occurred:
            self.occurred |= fresh
        if self.record_times and fresh.any():
            for i in np.nonzero(fresh)[0]:
                self.terminal[i] = terminal

    def step(self, w_new: np.ndarray, dt):
        """Advance one capacity step ending at driving value w_new.

        dt may be a scalar or a per-lane array: replicas are independent,
        so lanes may sit at different capacity times.
        """
        w = self.w
        self.t = self.t + dt
        self.step_idx += 1
        t_now = self.t

        # flow updates with the step's (constant) driving value
        yx_new = real_step_right(self.yx, w, dt)
        self.dx *= np.where(self.x_crossed, 1.0, (self.yx - w) / (yx_new - w))
        self.yx = yx_new
        self.y_img = real_step_left(self.y_img, w, dt)
        self.det_val = real_step_left(self.det_val, w, dt)
        if self.has_u:
            if self.u_side_right:
                self.yu = real_step_right(self.yu, w, dt)
            else:
                self.yu = real_step_left(self.yu, w, dt)
        self.conf_lo = real_step_left(self.conf_lo, w, dt)
        self.conf_hi = real_step_right(self.conf_hi, w, dt)
        if self.g_even:
            self.s1_lo = real_step_left(self.s1_lo, w, dt)
            self.s1_hi = real_step_right(self.s1_hi, w, dt)

        # crossings against the post-step driving value
        x_cross_now = ~self.x_crossed & (w_new >= self.yx)
        self.x_crossed |= x_cross_now
        if self.has_u:
            if self.u_side_right:
                u_cross_now = ~self.u_crossed & (w_new >= self.yu)
            else:
                u_cross_now = ~self.u_crossed & (w_new <= self.yu)
            self.u_cross_step = np.where(u_cross_now, self.step_idx, self.u_cross_step)
            self.u_crossed |= u_cross_now

        # gamma_even auxiliary filter: state at the unit-disc exit surrogate
        if self.g_even:
            s_now = ~self.s_reached & ((w_new <= self.s1_lo) | (w_new >= self.s1_hi)
                                       | (t_now >= 0.5))
            froze = s_now & ~self.resolved
            self.s_filter_ok = np.where(
                froze, ~self.x_crossed & ~self.u_crossed, self.s_filter_ok)
            self.s_reached |= s_now

        # confinement filter (frozen at the first tau for family A /
        # first sigma for family B)
        active_conf = ~self.conf_frozen
        conf_fail_now = active_conf & (
            (w_new <= self.conf_lo) | (w_new >= self.conf_hi)
            | (t_now > self.conf_cap))
        self.conf_failed |= conf_fail_now

        # T_x ends everything not already resolved
        self._mark_resolved(x_cross_now, occurred=False, terminal="T_x")

        # gamma_odd: T_u strictly before tau_1 kills the event
        if self.spec.family is BoundaryFamily.GAMMA_ODD:
            dead = self.u_crossed & (self.tau_count == 0) & ~self.resolved
            self._mark_resolved(dead, occurred=False, terminal="T_u")

        if self.sigma_first:
            self._sigma_checks(w_new)
            self._tau_checks(w_new)
        else:
            self._tau_checks(w_new)
            self._sigma_checks(w_new)
        self.w = w_new

    def _tau_checks(self, w_new):
        gap = self.yx - w_new
        trig = (~self.resolved) & (self.phase == 0) \
            & (gap <= self.hit_factor * self.spec.eps * self.dx)
        if not trig.any():
            return
        self.tau_count[trig] += 1
        self.phase[trig] = 1
        # arm the ray detector at the current unswallowed-ray image
        self.det_val = np.where(trig, self.y_img, self.det_val)
        self.armed |= trig
        if not self.sigma_first:
            self.conf_frozen |= trig & (self.tau_count == 1)
        if self.record_times:
            for i in np.nonzero(trig)[0]:
                self.tau_times[i].append(float(self.t[i]))
        need = self.spec.needs_tau
        if self.spec.family in (BoundaryFamily.ALPHA_ODD, BoundaryFamily.ALPHA_EVEN):
            done = trig & (self.tau_count >= need)
            self._mark_resolved(done, occurred=True, terminal="resolved")

    def _sigma_checks(self, w_new):
        trig = (~self.resolved) & (self.phase == 1) & self.armed \
            & (w_new <= self.det_val)
        if not trig.any():
            return
        self.sigma_count[trig] += 1
        self.phase[trig] = 0
        self.armed &= ~trig
        if self.sigma_first:
            self.conf_frozen |= trig & (self.sigma_count == 1)
        if self.record_times:
            for i in np.nonzero(trig)[0]:
                self.sigma_times[i].append(float(self.t[i]))
        fam = self.spec.family
        if self.g_even:
            first = trig & (self.sigma_count == 1)
            # strict earlier swallowing of u is the only failure mode
            early = first & self.u_crossed & (self.u_cross_step < self.step_idx)
            self.gamma_ok &= ~early
        need = self.spec.needs_sigma
        if fam in (BoundaryFamily.BETA_EVEN, BoundaryFamily.BETA_ODD):
            done = trig & (self.sigma_count >= need)
            self._mark_resolved(done, occurred=True, terminal="resolved")
        elif fam in (BoundaryFamily.GAMMA_ODD, BoundaryFamily.GAMMA_EVEN):
            done = trig & (self.sigma_count >= need) & self.gamma_ok
            self._mark_resolved(done, occurred=True, terminal="resolved")
            dead = trig & (self.sigma_count >= need) & ~self.gamma_ok
            self._mark_resolved(dead, occurred=False, terminal="resolved")

    # -- outcomes ---------------------------------------------------------

    def filter_ok(self) -> np.ndarray:
        ok = ~self.conf_failed
        if self.g_even:
            ok &= self.s_filter_ok & self.s_reached
        return ok

    def trigger_gaps(self) -> np.ndarray:
        """Per-lane image distance to the nearest armed trigger, floored at
        a fixed fraction of the hit scale (used for adaptive stepping)."""
        eps = self.spec.eps
        hit_scale = self.hit_factor * eps * self.dx
        gap = self.yx - self.w
        g = np.where(self.phase == 0, gap - hit_scale, gap)
        g = np.where(self.armed, np.minimum(g, self.w - self.det_val), g)
        if self.has_u and not np.all(self.u_crossed):
            g = np.where(self.u_crossed, g, np.minimum(g, np.abs(self.w - self.yu)))
        live_conf = ~self.conf_frozen
        if live_conf.any():
            conf_gap = np.minimum(self.w - self.conf_lo, self.conf_hi - self.w)
            g = np.where(live_conf, np.minimum(g, conf_gap), g)
        if self.g_even:
            live = ~self.s_reached
            s_gap = np.minimum(self.w - self.s1_lo, self.s1_hi - self.w)
            g = np.where(live, np.minimum(g, s_gap), g)
        floor = np.maximum(hit_scale / 8.0, 1e-3 * eps)
        return np.maximum(g, floor)

    def compact(self, extra_drop=None):
        keep = ~self.resolved
        if extra_drop is not None:
            keep &= ~extra_drop
        if keep.all():
            return None
        idx = np.nonzero(keep)[0]
        for name in ("t", "w", "yx", "dx", "x_crossed", "y_img", "det_val",
                     "armed", "conf_lo", "conf_hi", "conf_failed",
                     "conf_frozen", "phase", "tau_count", "sigma_count",
                     "resolved", "occurred", "gamma_ok"):
            setattr(self, name, getattr(self, name)[idx])
        if self.has_u:
            self.yu = self.yu[idx]
            self.u_crossed = self.u_crossed[idx]
            self.u_cross_step = self.u_cross_step[idx]
        if self.g_even:
            self.s1_lo = self.s1_lo[idx]
            self.s1_hi = self.s1_hi[idx]
            self.s_reached = self.s_reached[idx]
            self.s_filter_ok = self.s_filter_ok[idx]
        self.n = len(idx)
        return idx


class _InteriorMachine:
    """Lane-parallel automaton for one interior event spec."""

    def __init__(self, spec: InteriorEventSpec, n: int,
                 conf_radius: float = DEFAULT_INTERIOR_RADIUS,
                 hit_factor: float = DEFAULT_HIT_FACTOR,
                 pinch_tol: float = DEFAULT_PINCH_TOL,
                 record_times: bool = False):
        self.spec = spec
        self.n = n
        self.t = np.zeros(n)
        self.hit_factor = float(hit_factor)
        self.pinch_tol = float(pinch_tol)
        self.conf_radius = float(conf_radius)
        self.conf_cap = 0.5 * self.conf_radius ** 2

        self.w = np.zeros(n)
        self.g = np.full(n, complex(spec.z))
        self.dz = np.ones(n)
        self.z_crossed = np.zeros(n, bool)
        self.y_img = np.full(n, float(spec.y))
        self.det_val = np.full(n, float(spec.y))
        self.armed = np.zeros(n, bool)
        self.conf_lo = np.full(n, -self.conf_radius)
        self.conf_hi = np.full(n, self.conf_radius)
        self.conf_failed = np.zeros(n, bool)
        self.conf_frozen = np.zeros(n, bool)
        self.gamma = spec.family is InteriorFamily.GAMMA
        if self.gamma:
            self.yw = np.zeros(n)
            self.w_seeded = np.zeros(n, bool)
            self.w_crossed = np.zeros(n, bool)
            self.w_cross_step = np.full(n, -1, dtype=np.int64)
        self.phase = np.zeros(n, dtype=np.int8)
        self.tau_count = np.zeros(n, dtype=np.int16)
        self.sigma_count = np.zeros(n, dtype=np.int16)
        self.resolved = np.zeros(n, bool)
        self.occurred = np.zeros(n, bool)
        self.gamma_ok = np.ones(n, bool)
        self.step_idx = 0
        self.record_times = record_times
        if record_times:
            self.tau_times = [[] for _ in range(n)]
            self.sigma_times = [[] for _ in range(n)]
            self.terminal = ["horizon"] * n

    def _mark_resolved(self, mask, occurred: bool, terminal: str):
        fresh = mask & ~self.resolved
        self.resolved |= fresh
        if occurred:
            self.occurred |= fresh
        if self.record_times and fresh.any():
            for i in np.nonzero(fresh)[0]:
                self.terminal[i] = terminal

    def step(self, w_new: np.ndarray, dt):
        w = self.w
        self.t = self.t + dt
        self.step_idx += 1

        alive = ~self.z_crossed
        zeta = self.g - w
        s = np.sqrt(zeta * zeta + 4.0 * dt)
        s = np.where(s.imag < 0, -s, s)
        g_new = np.where(alive, w + s, self.g)
        direct_hit = alive & ~(g_new.imag > 0.0)
        g_new = np.where(direct_hit, self.g, g_new)
        alive &= ~direct_hit
        ratio = np.where(alive, np.abs(zeta) / np.abs(g_new - w), 1.0)
        self.dz *= np.where(np.isfinite(ratio), ratio, 1.0)
        self.g = g_new
        self.z_crossed |= direct_hit
        self.y_img = real_step_left(self.y_img, w, dt)
        self.det_val = real_step_left(self.det_val, w, dt)
        self.conf_lo = real_step_left(self.conf_lo, w, dt)
        self.conf_hi = real_step_right(self.conf_hi, w, dt)
        if self.gamma:
            self.yw = np.where(self.w_seeded,
                               real_step_left(self.yw, w, dt), self.yw)

        gap = np.abs(self.g - w_new)
        # swallow when the image gap collapses or the access derivative
        # underflows: a throat below ~1e-4 of the target scale cannot be
        # re-entered with non-negligible probability, and the threshold
        # scales with eps so fitted slopes are unaffected
        pinch_eff = max(self.pinch_tol, 2.5e-4 * self.spec.eps)
        z_cross_now = ~self.z_crossed & (
            (gap <= pinch_eff) | (self.dz <= 1e-12) | ~np.isfinite(gap))
        self.z_crossed |= z_cross_now
        if self.gamma:
            w_cross_now = self.w_seeded & ~self.w_crossed & (w_new <= self.yw)
            self.w_cross_step = np.where(w_cross_now, self.step_idx, self.w_cross_step)
            self.w_crossed |= w_cross_now

        active_conf = ~self.conf_frozen
        conf_fail_now = active_conf & (
            (w_new <= self.conf_lo) | (w_new >= self.conf_hi)
            | (self.t > self.conf_cap))
        self.conf_failed |= conf_fail_now

        self._mark_resolved(z_cross_now, occurred=False, terminal="T_z")

        # tau checks then sigma checks (interior alternation starts with tau)
        trig = (~self.resolved) & (self.phase == 0) \
            & (gap <= self.hit_factor * self.spec.eps * self.dz)
        if trig.any():
            self.tau_count[trig] += 1
            self.phase[trig] = 1
            self.det_val = np.where(trig, self.y_img, self.det_val)
            self.armed |= trig
            first = trig & (self.tau_count == 1)
            self.conf_frozen |= first
            if self.gamma:
                seed = first & ~self.w_seeded
                self.yw = np.where(seed, w_new - 4.0 * self.dz * self.spec.eps,
                                   self.yw)
                self.w_seeded |= seed
            if self.record_times:
                for i in np.nonzero(trig)[0]:
                    self.tau_times[i].append(float(self.t[i]))
            if self.spec.family is InteriorFamily.ALPHA:
                done = trig & (self.tau_count >= self.spec.j)
                self._mark_resolved(done, occurred=True, terminal="resolved")

        trig = (~self.resolved) & (self.phase == 1) & self.armed \
            & (w_new <= self.det_val)
        if trig.any():
            self.sigma_count[trig] += 1
            self.phase[trig] = 0
            self.armed &= ~trig
            if self.record_times:
                for i in np.nonzero(trig)[0]:
                    self.sigma_times[i].append(float(self.t[i]))
            if self.gamma:
                first = trig & (self.sigma_count == 1)
                early = first & self.w_crossed & (self.w_cross_step < self.step_idx)
                self.gamma_ok &= ~early
            if self.spec.family in (InteriorFamily.BETA, InteriorFamily.GAMMA):
                done = trig & (self.sigma_count >= self.spec.j)
                good = done & self.gamma_ok
                self._mark_resolved(good, occurred=True, terminal="resolved")
                self._mark_resolved(done & ~self.gamma_ok, occurred=False,
                                    terminal="resolved")

        self.w = w_new

    def filter_ok(self) -> np.ndarray:
        return ~self.conf_failed

    def trigger_gaps(self) -> np.ndarray:
        """Per-lane image distance to the nearest armed trigger."""
        eps = self.spec.eps
        hit_scale = self.hit_factor * eps * self.dz
        gap = np.abs(self.g - self.w)
        g = np.where(self.phase == 0, gap - hit_scale, gap)
        g = np.where(self.armed, np.minimum(g, self.w - self.det_val), g)
        if self.gamma:
            live = self.w_seeded & ~self.w_crossed
            g = np.where(live, np.minimum(g, self.w - self.yw), g)
        live_conf = ~self.conf_frozen
        if live_conf.any():
            conf_gap = np.minimum(self.w - self.conf_lo, self.conf_hi - self.w)
            g = np.where(live_conf, np.minimum(g, conf_gap), g)
        floor = np.maximum(hit_scale / 8.0, 1e-3 * eps)
        return np.maximum(g, floor)

    def compact(self, extra_drop=None):
        keep = ~self.resolved
        if extra_drop is not None:
            keep &= ~extra_drop
        if keep.all():
            return None
        idx = np.nonzero(keep)[0]
        for name in ("t", "w", "g", "dz", "z_crossed", "y_img", "det_val", "armed",
                     "conf_lo", "conf_hi", "conf_failed", "conf_frozen",
                     "phase", "tau_count", "sigma_count", "resolved",
                     "occurred", "gamma_ok"):
            setattr(self, name, getattr(self, name)[idx])
        if self.gamma:
            for name in ("yw", "w_seeded", "w_crossed", "w_cross_step"):
                setattr(self, name, getattr(self, name)[idx])
        self.n = len(idx)
        return idx


# ---------------------------------------------------------------------------
# Single-chain detection
# ---------------------------------------------------------------------------

def _run_machine_on_path(machine, driving: DrivingPath):
    dts = driving.step_sizes()
    for i in range(len(dts)):
        machine.step(np.array([driving.values[i + 1]]), float(dts[i]))


def detect_boundary_event(driving: DrivingPath, spec: BoundaryEventSpec,
                          filter_delta: float = DEFAULT_FILTER_DELTA,
                          hit_factor: float = DEFAULT_HIT_FACTOR,
                          method: str = "tracker"):
    """Detect one boundary event on a stored chain.

    Returns (occurred, record, filter_ok); `occurred` is None when the
    chain ended before the event resolved (indeterminate outcome).
    """
    if method == "trace":
        return _detect_boundary_trace(driving, spec, filter_delta)
    m = _BoundaryMachine(spec, 1, filter_delta=filter_delta,
                         hit_factor=hit_factor, record_times=True)
    _run_machine_on_path(m, driving)
    occurred = bool(m.occurred[0]) if m.resolved[0] else None
    record = StoppingRecord(taus=list(m.tau_times[0]),
                            sigmas=list(m.sigma_times[0]),
                            terminal=m.terminal[0])
    return occurred, record, bool(m.filter_ok()[0])


def detect_interior_event(driving: DrivingPath, spec: InteriorEventSpec,
                          conf_radius: float = DEFAULT_INTERIOR_RADIUS,
                          hit_factor: float = DEFAULT_HIT_FACTOR,
                          method: str = "tracker"):
    """Detect one interior event on a stored chain (see detect_boundary_event)."""
    if method == "trace":
        return _detect_interior_trace(driving, spec, conf_radius)
    m = _InteriorMachine(spec, 1, conf_radius=conf_radius,
                         hit_factor=hit_factor, record_times=True)
    _run_machine_on_path(m, driving)
    occurred = bool(m.occurred[0]) if m.resolved[0] else None
    record = StoppingRecord(taus=list(m.tau_times[0]),
                            sigmas=list(m.sigma_times[0]),
                            terminal=m.terminal[0])
    return occurred, record, bool(m.filter_ok()[0])


# ---------------------------------------------------------------------------
# Trace-mode detection (exact polyline geometry; quadratic in steps)
# ---------------------------------------------------------------------------

def _polyline(driving: DrivingPath):
    hull = HullMap.from_driving(driving)
    ts, pts = trace(hull)
    times = np.concatenate([[0.0], ts])
    points = np.concatenate([[complex(driving.values[0], 0.0)], pts])
    return times, points


def _first_right_touch(driving: DrivingPath, x: float, from_time: float = 0.0):
    """Mirror of first_ray_hit_via_swallowing for [x, inf)."""
    dts = driving.step_sizes()
    wv = driving.step_values()
    yv = float(x)
    for i in range(len(dts)):
        y_new = real_step_right(yv, wv[i], dts[i])
        if driving.values[i + 1] >= y_new and driving.times[i + 1] >= from_time:
            return float(driving.times[i + 1])
        yv = float(y_new)
    return None


def _leq(a, b):
    """a < b with None meaning +infinity."""
    if a is None:
        return False
    return b is None or a < b


def _detect_boundary_trace(driving: DrivingPath, spec: BoundaryEventSpec,
                           filter_delta: float):
    """Geometric detector: disc/arc hits from the traced polyline, ray hits
    and swallowing times from boundary trackers."""
    times, points = _polyline(driving)
    horizon = float(driving.times[-1])
    t_x = _first_right_touch(driving, spec.x)
    fam = spec.family
    sigma_first = fam in _FAMILY_B
    t_u = None
    if spec.u is not None:
        if fam is BoundaryFamily.GAMMA_ODD:
            t_u = _first_right_touch(driving, spec.u)
        else:
            t_u = first_ray_hit_via_swallowing(driving, spec.u)

    def ray_after(t0):
        return first_ray_hit_via_swallowing(driving, spec.y, from_time=t0)

    def arc_hit_after(s):
        arc = surviving_arc(points[times <= s], complex(spec.x), spec.eps)
        return first_hit_arc(times, points, arc, from_time=s)

    taus: list = []
    sigmas: list = []
    max_rounds = spec.j + 2
    if sigma_first:
        s = ray_after(0.0)
        for _ in range(max_rounds):
            if s is None:
                break
            sigmas.append(s)
            t = arc_hit_after(s)
            if t is None:
                break
            taus.append(t)
            s = ray_after(t)
    else:
        t = first_hit_disc(times, points, complex(spec.x), spec.eps)
        for _ in range(max_rounds):
            if t is None:
                break
            taus.append(t)
            s = ray_after(t)
            if s is None:
                break
            sigmas.append(s)
            t = arc_hit_after(s)

    taus_ok = [s for s in taus if _leq(s, t_x)]
    sigmas_ok = [s for s in sigmas if _leq(s, t_x)]
    precondition_dead = False
    if fam in (BoundaryFamily.ALPHA_ODD, BoundaryFamily.ALPHA_EVEN):
        occurred = len(taus_ok) >= spec.j
    elif fam in (BoundaryFamily.BETA_EVEN, BoundaryFamily.BETA_ODD):
        occurred = len(sigmas_ok) >= spec.j
    elif fam is BoundaryFamily.GAMMA_ODD:
        cond_u = bool(taus) and _leq(taus[0], t_u)
        occurred = len(sigmas_ok) >= spec.j and cond_u
        precondition_dead = t_u is not None and (not taus or not _leq(taus[0], t_u))
    else:  # GAMMA_EVEN: strict earlier swallowing of u is the failure mode
        cond_u = bool(sigmas) and not (t_u is not None and t_u < sigmas[0])
        occurred = len(sigmas_ok) >= spec.j and cond_u
        precondition_dead = (t_u is not None and bool(sigmas)
                             and t_u < sigmas[0])
    if occurred:
        outcome, terminal = True, "resolved"
    elif t_x is not None:
        outcome, terminal = False, "T_x"
    elif precondition_dead:
        outcome, terminal = False, "T_u"
    else:
        outcome, terminal = None, "horizon"

    # Prop.-3.1-style filter, exact on the polyline: confinement plus
    # clearance of the segment [x-eps, x+3eps] before tau_1
    filter_ok = True
    if taus:
        upto = points[times <= taus[0]]
        filter_ok &= bool(np.all(np.abs(upto) <= 1.0 / filter_delta))
        seg_lo, seg_hi = spec.x - spec.eps, spec.x + 3 * spec.eps
        px = np.clip(upto.real, seg_lo, seg_hi)
        d = np.abs(upto - (px + 0j))
        filter_ok &= bool(np.min(d) >= filter_delta * spec.eps) if len(d) else True
    record = StoppingRecord(taus=taus, sigmas=sigmas, terminal=terminal)
    return outcome, record, bool(filter_ok)


# ---------------------------------------------------------------------------
# Rasterized component geometry for interior events
# ---------------------------------------------------------------------------

def _blocked_cells(points: np.ndarray, x0, y0, h, nx, ny):
    """Grid cells crossed by the polyline, with diagonal joints bridged so a
    4-connected flood cannot leak through a corner."""
    blocked = np.zeros((nx, ny), dtype=bool)
    if len(points) < 2:
        return blocked
    seg = points[1:] - points[:-1]
    for p, d in zip(points[:-1], seg):
        steps = max(2, int(np.ceil(abs(d) / (h / 4.0))) + 1)
        ss = np.linspace(0.0, 1.0, steps)
        zz = p + ss * d
        ii = np.floor((zz.real - x0) / h).astype(int)
        jj = np.floor((zz.imag - y0) / h).astype(int)
        ok = (ii >= 0) & (ii < nx) & (jj >= 0) & (jj < ny)
        ii, jj = ii[ok], jj[ok]
        blocked[ii, jj] = True
        if len(ii) > 1:
            diag = (np.abs(np.diff(ii)) == 1) & (np.abs(np.diff(jj)) == 1)
            bi = ii[:-1][diag]
            bj = jj[1:][diag]
            blocked[bi, bj] = True
    return blocked


def _component_arc(points, z, eps, res=64):
    """(C_z ring arc connected to infinity, indeterminate flag).

    Returns (CircleArc or None, flag). The arc is C_z^b oriented clockwise;
    its ending point X_z^b sits at the arc's `start` angle.
    """
    from scipy import ndimage

    z = complex(z)
    h = eps / float(res)
    pad = 4
    nx = ny = 2 * res + 2 * pad
    x0 = z.real - eps - pad * h
    y0 = z.imag - eps - pad * h
    blocked = _blocked_cells(np.asarray(points, dtype=complex), x0, y0, h, nx, ny)
    ci = np.arange(nx)[:, None] * np.ones(ny, dtype=int)
    cj = np.ones(nx, dtype=int)[:, None] * np.arange(ny)
    cx = x0 + (ci + 0.5) * h
    cy = y0 + (cj + 0.5) * h
    rad = np.hypot(cx - z.real, cy - z.imag)
    inside = rad <= eps - 0.5 * h
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])

    open_in = inside & ~blocked
    labels, _ = ndimage.label(open_in, structure=structure)
    zi = int((z.real - x0) / h)
    zj = int((z.imag - y0) / h)
    z_lab = labels[zi, zj]
    if z_lab == 0:
        return None, True  # z's own cell blocked: unresolvable at this raster
    comp = labels == z_lab

    # ring cells of C_z: component cells touching the disc boundary band
    ring = comp & (rad >= eps - 1.5 * h)
    if not ring.any():
        return None, True
    ang = np.mod(np.arctan2(cy - z.imag, cx - z.real), 2 * np.pi)
    ring_ang = np.sort(ang[ring])
    # split into arcs at angular gaps larger than a few cells
    gap_tol = 4.0 * h / eps
    gaps = np.diff(ring_ang)
    cuts = np.nonzero(gaps > gap_tol)[0]
    arcs = []
    bounds = np.concatenate([[0], cuts + 1, [len(ring_ang)]])
    for a, b in zip(bounds[:-1], bounds[1:]):
        if b > a:
            arcs.append((ring_ang[a], ring_ang[b - 1]))
    # wrap-around merge
    if len(arcs) >= 2 and (arcs[0][0] + 2 * np.pi - arcs[-1][1]) <= gap_tol:
        lo = arcs[-1][0]
        hi = arcs[0][1] + 2 * np.pi
        arcs = [(lo, hi)] + arcs[1:-1]

    # outside connectivity: flood from the border of the padded box
    open_out = ~blocked & (rad >= eps + 0.5 * h)
    lab_out, _ = ndimage.label(open_out, structure=structure)
    border_labels = set(lab_out[0, :]) | set(lab_out[-1, :]) \
        | set(lab_out[:, 0]) | set(lab_out[:, -1])
    border_labels.discard(0)

    connected = []
    for (lo, hi) in arcs:
        mid = 0.5 * (lo + hi)
        probe = z + (eps + 2.0 * h) * np.exp(1j * mid)
        pi = int((probe.real - x0) / h)
        pj = int((probe.imag - y0) / h)
        if not (0 <= pi < nx and 0 <= pj < ny):
            continue
        if lab_out[pi, pj] in border_labels:
            connected.append((lo, hi))
    if len(connected) != 1:
        return None, True
    lo, hi = connected[0]
    if (hi - lo) < 2.0 * h / eps:
        return None, True  # thinner than two raster cells
    return CircleArc(z, eps, float(lo % (2 * np.pi)), float(hi)), False


def _detect_interior_trace(driving: DrivingPath, spec: InteriorEventSpec,
                           conf_radius: float):
    """Geometric interior detector with rasterized component bookkeeping."""
    from .loewner import evolve_interior_point

    times, points = _polyline(driving)
    trk = evolve_interior_point(complex(spec.z), driving)
    t_z = trk.swallowed_at

    def ray_after(t0):
        return first_ray_hit_via_swallowing(driving, spec.y, from_time=t0)

    taus: list = []
    sigmas: list = []
    indeterminate_raster = False
    tau1 = first_hit_disc(times, points, complex(spec.z), spec.eps)
    t_w = None
    if tau1 is not None:
        taus.append(tau1)
        if spec.family is InteriorFamily.GAMMA:
            k = int(np.searchsorted(driving.times, tau1))
            absd = trk.abs_derivative[min(k, len(trk.abs_derivative) - 1)]
            u_img = driving.values[k] - 4.0 * absd * spec.eps
            sub = DrivingPath(driving.times[k:] - driving.times[k],
                              driving.values[k:])
            t_w_rel = _first_left_cross_seeded(sub, u_img)
            t_w = None if t_w_rel is None else t_w_rel + driving.times[k]
        cursor = tau1
        for _ in range(spec.j + 1):
            s = ray_after(cursor)
            if s is None:
                break
            sigmas.append(s)
            cursor = s
            if len(sigmas) >= spec.j:
                break
            arc, bad = _component_arc(points[times <= s], spec.z, spec.eps)
            if bad:
                indeterminate_raster = True
                break
            # sub-component of the arc containing X_z^b (the clockwise end)
            seg, ss = _segment_circle_params(points[:-1], points[1:],
                                             complex(spec.z), spec.eps)
            live = None
            if len(seg):
                hit_t = times[seg] + ss * (times[seg + 1] - times[seg])
                sel = hit_t <= s
                if sel.any():
                    pts_c = points[seg][sel] + ss[sel] * (points[seg + 1] - points[seg])[sel]
                    aa = np.mod(np.angle(pts_c - complex(spec.z)), 2 * np.pi)
                    off = np.mod(aa - arc.start, 2 * np.pi)
                    span = (arc.end - arc.start) % (2 * np.pi) or 2 * np.pi
                    inner = np.sort(off[(off > 1e-9) & (off < span - 1e-9)])
                    if len(inner):
                        live = CircleArc(arc.center, arc.radius, arc.start,
                                         arc.start + float(inner[0]))
            target = live if live is not None else arc
            nxt = first_hit_arc(times, points, target, from_time=s)
            if nxt is None:
                break
            taus.append(nxt)
            cursor = nxt

    taus_ok = [s for s in taus if _leq(s, t_z)]
    sigmas_ok = [s for s in sigmas if _leq(s, t_z)]
    fam = spec.family
    if fam is InteriorFamily.ALPHA:
        occurred = len(taus_ok) >= spec.j
        pending = not occurred and t_z is None
    elif fam is InteriorFamily.BETA:
        occurred = len(sigmas_ok) >= spec.j
        pending = not occurred and t_z is None
    else:
        cond_w = bool(sigmas) and not (t_w is not None and t_w < sigmas[0])
        occurred = len(sigmas_ok) >= spec.j and cond_w
        pending = not occurred and t_z is None
    if indeterminate_raster:
        outcome = None
        terminal = "raster-indeterminate"
    else:
        outcome = None if (pending and not occurred) else occurred
        terminal = "resolved" if occurred else ("horizon" if pending else "T_z")

    filter_ok = True
    if taus:
        upto = points[times <= taus[0]]
        filter_ok = bool(np.all(np.abs(upto) <= conf_radius))
    record = StoppingRecord(taus=taus, sigmas=sigmas, terminal=terminal)
    return outcome, record, bool(filter_ok)


def _first_left_cross_seeded(driving: DrivingPath, seed_img: float):
    """First crossing time of a left tracker seeded at image value seed_img."""
    dts = driving.step_sizes()
    wv = driving.step_values()
    yv = float(seed_img)
    for i in range(len(dts)):
        y_new = real_step_left(yv, wv[i], dts[i])
        if driving.values[i + 1] <= y_new:
            return float(driving.times[i + 1])
        yv = float(y_new)
    return None


# ---------------------------------------------------------------------------
# Monte Carlo estimation
# ---------------------------------------------------------------------------

@dataclass
class EventEstimate:
    """Aggregated outcome of one (epsilon, event) Monte Carlo run.

    Unfiltered and filtered counts are both reported; `indeterminate`
    replicas hit the horizon unresolved and are excluded from p_hat.
    """

    epsilon: float
    occurred: int
    determinate: int
    indeterminate: int
    p_hat: float
    se: float
    f_occurred: int
    f_determinate: int
    f_indeterminate: int
    p_hat_filtered: float
    se_filtered: float
    n_replicas: int
    kappa: float
    dt: Optional[float]   # None = adaptive capacity stepping
    horizon: float
    seed: int
    filter_delta: float
    detector: str
    block_size: int

    @staticmethod
    def _se(k, n):
        if n <= 0:
            return float("nan")
        p = k / n
        return math.sqrt(p * (1.0 - p) / n)

    def wilson(self, confidence: float = 0.95):
        from .estimation import wilson_interval

        return wilson_interval(self.occurred, max(self.determinate, 1),
                               confidence)

    def wilson_filtered(self, confidence: float = 0.95):
        from .estimation import wilson_interval

        return wilson_interval(self.f_occurred, max(self.f_determinate, 1),
                               confidence)

    def to_json_dict(self, **extra) -> dict:
        wl, wh = self.wilson()
        fwl, fwh = self.wilson_filtered()
        d = {
            "epsilon": self.epsilon,
            "occurred": self.occurred,
            "total": self.determinate,
            "indeterminate": self.indeterminate,
            "p_hat": self.p_hat,
            "se": self.se,
            "wilson_low": wl,
            "wilson_high": wh,
            "wilson_low_filtered": fwl,
            "wilson_high_filtered": fwh,
            "occurred_filtered": self.f_occurred,
            "total_filtered": self.f_determinate,
            "indeterminate_filtered": self.f_indeterminate,
            "p_hat_filtered": self.p_hat_filtered,
            "se_filtered": self.se_filtered,
            "n_replicas": self.n_replicas,
            "kappa": self.kappa,
            "dt": self.dt,
            "horizon": self.horizon,
            "seed": self.seed,
            "filter_delta": self.filter_delta,
            "detector": self.detector,
            "block_size": self.block_size,
        }
        d.update(extra)
        return d


def default_dt(eps: float, kappa: float, resolution: float = 4.0) -> float:
    """Scale-covariant step: sqrt(kappa * dt) = eps / resolution."""
    return (eps / resolution) ** 2 / kappa


def default_horizon(spec, filter_delta: float = DEFAULT_FILTER_DELTA,
                    conf_radius: float = DEFAULT_INTERIOR_RADIUS) -> float:
    """Horizon past the confinement capacity bound so the filtered event
    always resolves."""
    if isinstance(spec, InteriorEventSpec):
        return max(4.0 * 0.5 * conf_radius ** 2, 16.0)
    cap = 0.5 / filter_delta ** 2
    return 1.05 * cap


ADAPT_RELAX = 0.25    # step std = ADAPT_RELAX * (gap to nearest trigger)
ADAPT_DT_MAX = 0.25
_MAX_LOOP_STEPS = 50_000_000


def _run_tracker_block(spec, kappa, dt, horizon, n_lanes, seed, block_index,
                       filter_delta, conf_radius, hit_factor, compact_every=64):
    """One block of replicas run in lanes; returns outcome counters.

    With dt=None the capacity step is adaptive per lane: the step standard
    deviation tracks the image gap to the nearest armed trigger, so fine
    steps are spent only near stopping-time resolutions. Brownian
    increments are exact at any step size; the probability of an
    undetected within-step excursion across a trigger is exp(-2/relax^2)
    per step. Passing an explicit dt forces uniform stepping.
    """
    if isinstance(spec, InteriorEventSpec):
        machine = _InteriorMachine(spec, n_lanes, conf_radius=conf_radius,
                                   hit_factor=hit_factor)
    else:
        machine = _BoundaryMachine(spec, n_lanes, filter_delta=filter_delta,
                                   hit_factor=hit_factor)
    gen = rng_mod.stream(seed, block_index)
    counts = dict(occ=0, det=0, f_occ=0, f_det=0, f_ind=0, ind=0, n=n_lanes)

    def absorb(extra_drop=None):
        done = machine.resolved
        fok = machine.filter_ok()
        counts["occ"] += int(np.count_nonzero(machine.occurred & done))
        counts["det"] += int(np.count_nonzero(done))
        counts["f_occ"] += int(np.count_nonzero(machine.occurred & done & fok))
        counts["f_det"] += int(np.count_nonzero(done))
        if extra_drop is not None:
            timed_out = extra_drop & ~done
            counts["ind"] += int(np.count_nonzero(timed_out))
            # the filtered event is decided for timed-out lanes whose
            # filter already failed; still-open filters stay indeterminate
            counts["f_det"] += int(np.count_nonzero(timed_out & ~fok))
            counts["f_ind"] += int(np.count_nonzero(timed_out & fok))
        machine.compact(extra_drop)

    k = 0
    while machine.n and k < _MAX_LOOP_STEPS:
        if dt is None:
            gaps = machine.trigger_gaps()
            dts = np.minimum((ADAPT_RELAX * gaps) ** 2 / kappa, ADAPT_DT_MAX)
        else:
            dts = dt
        w_new = machine.w + np.sqrt(kappa * dts) * rng_mod.normals(gen, machine.n)
        machine.step(w_new, dts)
        k += 1
        if k % compact_every == 0 or machine.resolved.all():
            absorb(extra_drop=machine.t >= horizon)
    if machine.n:
        absorb(extra_drop=np.ones(machine.n, bool))
    return counts


def _run_trace_block(spec, kappa, dt, horizon, n_lanes, seed, block_index,
                     filter_delta, conf_radius):
    from .sle import simulate_plain

    counts = dict(occ=0, det=0, f_occ=0, f_det=0, ind=0, f_ind=0, n=n_lanes)
    gen = rng_mod.stream(seed, block_index)
    for _ in range(n_lanes):
        driving = simulate_plain(kappa, dt, horizon, gen)
        if isinstance(spec, InteriorEventSpec):
            outcome, _, fok = detect_interior_event(
                driving, spec, conf_radius=conf_radius, method="trace")
        else:
            outcome, _, fok = detect_boundary_event(
                driving, spec, filter_delta=filter_delta, method="trace")
        if outcome is None:
            counts["ind"] += 1
            if not fok:
                counts["f_det"] += 1
            else:
                counts["f_ind"] += 1
        else:
            counts["det"] += 1
            counts["occ"] += int(outcome)
            counts["f_det"] += 1
            counts["f_occ"] += int(outcome and fok)
    return counts


def _block_worker(args):
    kind = args[0]
    if kind == "tracker":
        return _run_tracker_block(*args[1:])
    return _run_trace_block(*args[1:])


def estimate_event_probability(spec, kappa, n_replicas, dt=None, horizon=None,
                               seed=0, filter_delta=DEFAULT_FILTER_DELTA,
                               conf_radius=DEFAULT_INTERIOR_RADIUS,
                               hit_factor=DEFAULT_HIT_FACTOR,
                               detector="tracker", block_size=4096,
                               workers=1) -> EventEstimate:
    """Estimate P[event] over independent replicas.

    Replicas run in blocks of `block_size` lanes; block b uses the
    (seed, b) stream, so results are reproducible for a fixed
    (spec, kappa, dt, horizon, seed, block_size, detector) tuple and merge
    deterministically by block index regardless of worker count.
    """
    if n_replicas < 1:
        raise EstimationError("need at least one replica")
    if detector not in ("tracker", "trace"):
        raise DomainError(f"unknown detector {detector!r}")
    kappa = float(kappa)
    if not 4.0 < kappa < 8.0:
        raise DomainError("event estimation requires kappa in (4, 8)")
    if horizon is None:
        horizon = default_horizon(spec, filter_delta, conf_radius)
    trace_dt = dt if dt is not None else default_dt(spec.eps, kappa)

    tasks = []
    b = 0
    left = int(n_replicas)
    while left > 0:
        lanes = min(block_size, left)
        if detector == "tracker":
            tasks.append(("tracker", spec, kappa, dt, horizon, lanes, seed, b,
                          filter_delta, conf_radius, hit_factor))
        else:
            tasks.append(("trace", spec, kappa, trace_dt, horizon, lanes, seed,
                          b, filter_delta, conf_radius))
        left -= lanes
        b += 1

    if workers > 1 and len(tasks) > 1:
        import concurrent.futures as cf

        with cf.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_block_worker, tasks))
    else:
        results = [_block_worker(t) for t in tasks]

    tot = {k: sum(r[k] for r in results)
           for k in ("occ", "det", "f_occ", "f_det", "ind", "f_ind", "n")}
    if tot["det"] == 0 and tot["f_det"] == 0:
        raise EstimationError("all replicas indeterminate")
    p = tot["occ"] / tot["det"] if tot["det"] else float("nan")
    pf = tot["f_occ"] / tot["f_det"] if tot["f_det"] else float("nan")
    return EventEstimate(
        epsilon=float(spec.eps),
        occurred=tot["occ"], determinate=tot["det"], indeterminate=tot["ind"],
        p_hat=p, se=EventEstimate._se(tot["occ"], tot["det"]),
        f_occurred=tot["f_occ"], f_determinate=tot["f_det"],
        f_indeterminate=tot["f_ind"],
        p_hat_filtered=pf, se_filtered=EventEstimate._se(tot["f_occ"], tot["f_det"]),
        n_replicas=int(n_replicas), kappa=kappa,
        dt=None if dt is None else float(dt),
        horizon=float(horizon), seed=int(seed), filter_delta=float(filter_delta),
        detector=detector, block_size=int(block_size),
    )
