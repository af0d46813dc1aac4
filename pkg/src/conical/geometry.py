"""Planar cones, similarities, segments and exact segment/cone clipping.

A cone is the open two-sided region around a line through its apex,

    K(x, theta, alpha) = {y : dist(y, x + V_theta) < sin(alpha) |y - x|},

optionally truncated to an annulus ``r_min < |y - x| <= r_max``.  All
values here are immutable; every function is pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from numba import njit

HALF_SQRT2 = math.sqrt(2.0) / 2.0

# cos/sin of k * pi/4, exact up to the rounding of sqrt(2)/2
_ROT = (
    (1.0, 0.0),
    (HALF_SQRT2, HALF_SQRT2),
    (0.0, 1.0),
    (-HALF_SQRT2, HALF_SQRT2),
    (-1.0, 0.0),
    (-HALF_SQRT2, -HALF_SQRT2),
    (0.0, -1.0),
    (HALF_SQRT2, -HALF_SQRT2),
)

OUT, IN, STRADDLE = 0, 1, 2


def normalize_angle(theta: float) -> float:
    """Reduce a line angle into [0, pi)."""
    t = math.fmod(theta, math.pi)
    if t < 0.0:
        t += math.pi
    if t >= math.pi:
        t = 0.0
    return t


@dataclass(frozen=True)
class Direction:
    """Unoriented line direction V_theta, theta in [0, pi)."""

    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))

    @property
    def unit(self) -> np.ndarray:
        return np.array([math.cos(self.theta), math.sin(self.theta)])

    def rotated(self, turns: int) -> "Direction":
        return Direction(self.theta + turns * math.pi / 4.0)


def angle_between(a: Union[Direction, float], b: Union[Direction, float]) -> float:
    """Angle in [0, pi/2] between two lines."""
    ta = a.theta if isinstance(a, Direction) else normalize_angle(a)
    tb = b.theta if isinstance(b, Direction) else normalize_angle(b)
    d = abs(ta - tb) % math.pi
    return min(d, math.pi - d)


@dataclass(frozen=True)
class Cone:
    """Two-sided cone with apex, axis angle, aperture and radial truncation."""

    apex: tuple
    theta: float
    aperture: float
    r_min: float = 0.0
    r_max: float = math.inf

    def __post_init__(self):
        apex = tuple(float(v) for v in np.asarray(self.apex, dtype=float).reshape(2))
        object.__setattr__(self, "apex", apex)
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))
        if not 0.0 < self.aperture < math.pi / 2:
            raise ValueError(f"aperture must lie in (0, pi/2), got {self.aperture!r}")
        if self.r_min < 0.0 or not self.r_max > self.r_min:
            raise ValueError(f"need 0 <= r_min < r_max, got ({self.r_min}, {self.r_max})")

    @property
    def direction(self) -> Direction:
        return Direction(self.theta)

    def truncated(self, r_max: float, r_min: float = 0.0) -> "Cone":
        return Cone(self.apex, self.theta, self.aperture, r_min, r_max)


def cone_contains(c: Cone, y) -> bool:
    """Membership with strict angular/inner tests and a closed outer radius."""
    dx = float(y[0]) - c.apex[0]
    dy = float(y[1]) - c.apex[1]
    rho = math.hypot(dx, dy)
    if not (c.r_min < rho <= c.r_max):
        return False
    dist = abs(-math.sin(c.theta) * dx + math.cos(c.theta) * dy)
    return dist < math.sin(c.aperture) * rho


def cone_contains_many(c: Cone, ys: np.ndarray) -> np.ndarray:
    """Vectorised :func:`cone_contains` for an ``(n, 2)`` array."""
    ys = np.asarray(ys, dtype=float)
    dx = ys[:, 0] - c.apex[0]
    dy = ys[:, 1] - c.apex[1]
    rho = np.hypot(dx, dy)
    dist = np.abs(-math.sin(c.theta) * dx + math.cos(c.theta) * dy)
    return (rho > c.r_min) & (rho <= c.r_max) & (dist < math.sin(c.aperture) * rho)


@dataclass(frozen=True)
class Segment:
    a: tuple
    b: tuple

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(float(v) for v in self.a))
        object.__setattr__(self, "b", tuple(float(v) for v in self.b))

    @property
    def length(self) -> float:
        return math.hypot(self.b[0] - self.a[0], self.b[1] - self.a[1])

    @property
    def midpoint(self) -> tuple:
        return ((self.a[0] + self.b[0]) / 2.0, (self.a[1] + self.b[1]) / 2.0)


@dataclass(frozen=True, eq=False)
class Polyline:
    """Ordered chain of segments stored as ``(n, 2)`` start and end arrays."""

    starts: np.ndarray
    ends: np.ndarray
    connected: bool = True

    def __post_init__(self):
        s = np.ascontiguousarray(self.starts, dtype=float).reshape(-1, 2)
        e = np.ascontiguousarray(self.ends, dtype=float).reshape(-1, 2)
        if s.shape != e.shape or len(s) == 0:
            raise ValueError("a polyline needs a non-empty list of segments")
        if np.any(np.hypot(*(e - s).T) <= 0.0):
            raise ValueError("polyline segments must have positive length")
        s.setflags(write=False)
        e.setflags(write=False)
        object.__setattr__(self, "starts", s)
        object.__setattr__(self, "ends", e)

    @classmethod
    def from_vertices(cls, vertices) -> "Polyline":
        v = np.asarray(vertices, dtype=float)
        return cls(v[:-1], v[1:], True)

    @classmethod
    def from_segments(cls, segments) -> "Polyline":
        s = np.array([seg.a for seg in segments])
        e = np.array([seg.b for seg in segments])
        return cls(s, e, bool(np.allclose(s[1:], e[:-1], rtol=0, atol=0)))

    def __len__(self):
        return len(self.starts)

    def segment(self, i: int) -> Segment:
        return Segment(self.starts[i], self.ends[i])

    @property
    def lengths(self) -> np.ndarray:
        return np.hypot(*(self.ends - self.starts).T)

    @property
    def arclength(self) -> float:
        return math.fsum(self.lengths)

    def vertices(self) -> np.ndarray:
        if not self.connected:
            raise ValueError("vertex list only defined for connected chains")
        return np.vstack([self.starts, self.ends[-1:]])


@dataclass(frozen=True)
class Similarity:
    """p -> translate + scale * rho^turns(p), rho the rotation by pi/4."""

    turns: int = 0
    scale: float = 1.0
    translate: tuple = field(default=(0.0, 0.0))

    def __post_init__(self):
        if not self.scale > 0.0:
            raise ValueError("similarity scale must be positive")
        object.__setattr__(self, "turns", int(self.turns) % 8)
        object.__setattr__(self, "translate", tuple(float(v) for v in self.translate))

    @property
    def matrix(self) -> np.ndarray:
        c, s = _ROT[self.turns]
        return np.array([[c, -s], [s, c]])

    def __matmul__(self, other: "Similarity") -> "Similarity":
        t = self.apply_point(other.translate)
        return Similarity(self.turns + other.turns, self.scale * other.scale, t)

    def inverse(self) -> "Similarity":
        c, s = _ROT[(-self.turns) % 8]
        tx, ty = self.translate
        inv = 1.0 / self.scale
        return Similarity(-self.turns, inv, (-(c * tx - s * ty) * inv, -(s * tx + c * ty) * inv))

    def apply_point(self, p) -> tuple:
        c, s = _ROT[self.turns]
        x, y = float(p[0]), float(p[1])
        return (
            self.translate[0] + self.scale * (c * x - s * y),
            self.translate[1] + self.scale * (s * x + c * y),
        )

    def apply_points(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return np.asarray(self.translate) + self.scale * pts @ self.matrix.T

    def __call__(self, obj):
        return apply_similarity(self, obj)


def apply_similarity(s: Similarity, obj):
    """Image of a point, segment, polyline or cone under ``s``."""
    if isinstance(obj, Segment):
        return Segment(s.apply_point(obj.a), s.apply_point(obj.b))
    if isinstance(obj, Polyline):
        return Polyline(s.apply_points(obj.starts), s.apply_points(obj.ends), obj.connected)
    if isinstance(obj, Cone):
        return Cone(
            s.apply_point(obj.apex),
            obj.theta + s.turns * math.pi / 4.0,
            obj.aperture,
            obj.r_min * s.scale,
            obj.r_max * s.scale,
        )
    return s.apply_point(obj)


# --------------------------------------------------------------------------
# numba kernels shared by the measure engines


@njit(cache=True, nogil=True)
def _lin_root(v0, v1, out, n):
    # root of the affine map s -> v0 + s (v1 - v0) inside (0, 1)
    d = v1 - v0
    if d != 0.0:
        s = -v0 / d
        if 0.0 < s < 1.0:
            out[n] = s
            n += 1
    return n


@njit(cache=True, nogil=True)
def _circle_roots(t0, h2, inv_len, r, out, n):
    # crossings of the circle of radius r with s -> foot + (s - t0) d, inside (0, 1);
    # h2 is the squared distance from the centre to the line
    disc = r * r - h2
    if disc <= 0.0:
        return n
    half = math.sqrt(disc) * inv_len
    for s in (t0 - half, t0 + half):
        if 0.0 < s < 1.0:
            out[n] = s
            n += 1
    return n


@njit(cache=True, nogil=True)
def clip_length_buf(x0, y0, x1, y1, px, py, ex, ey, alpha, full, rmin, rmax, brk):
    """Length of segment (x0,y0)-(x1,y1) inside the cone at (px,py).

    ``(ex, ey)`` is the unit axis; ``full`` drops the angular condition
    (the region is then the annulus, i.e. a ball when rmin == 0).  ``brk``
    is scratch space of length >= 8.
    """
    dx = x1 - x0
    dy = y1 - y0
    seglen = math.hypot(dx, dy)
    if seglen * seglen == 0.0:  # length below 1e-154 contributes nothing measurable
        return 0.0
    wx = x0 - px
    wy = y0 - py
    ca = math.cos(alpha)
    sa = math.sin(alpha)
    pn = -ey * wx + ex * wy
    pe = ex * wx + ey * wy
    dn = -ey * dx + ex * dy
    de = ex * dx + ey * dy
    # signed distances to the two boundary lines, affine in s
    l1a = ca * pn - sa * pe
    l1b = ca * (pn + dn) - sa * (pe + de)
    l2a = ca * pn + sa * pe
    l2b = ca * (pn + dn) + sa * (pe + de)
    tol = 1e-12 * (math.hypot(wx, wy) + seglen)
    closed = (abs(l1a) <= tol and abs(l1b) <= tol) or (abs(l2a) <= tol and abs(l2b) <= tol)

    brk[0] = 0.0
    brk[1] = 1.0
    n = 2
    if not full:
        n = _lin_root(l1a, l1b, brk, n)
        n = _lin_root(l2a, l2b, brk, n)
    # foot of the perpendicular from the apex; distances measured from it
    # avoid cancellation when the radius is tiny next to the coordinates
    qa = seglen * seglen
    t0 = -(wx * dx + wy * dy) / qa
    cross = (wx * dy - wy * dx) / seglen
    h2 = cross * cross
    inv_len = 1.0 / seglen
    if rmin > 0.0:
        n = _circle_roots(t0, h2, inv_len, rmin, brk, n)
    if rmax < math.inf:
        n = _circle_roots(t0, h2, inv_len, rmax, brk, n)
    for i in range(1, n):
        v = brk[i]
        j = i - 1
        while j >= 0 and brk[j] > v:
            brk[j + 1] = brk[j]
            j -= 1
        brk[j + 1] = v

    total = 0.0
    rmin2 = rmin * rmin
    rmax2 = rmax * rmax
    for i in range(n - 1):
        s0 = brk[i]
        s1 = brk[i + 1]
        if s1 <= s0:
            continue
        s = 0.5 * (s0 + s1)
        rho2 = h2 + qa * (s - t0) * (s - t0)
        # with no inner radius the apex can be a chord midpoint; it is null
        if not ((rmin2 == 0.0 or rho2 > rmin2) and rho2 <= rmax2):
            continue
        if not full:
            v1 = l1a + s * (l1b - l1a)
            v2 = l2a + s * (l2b - l2a)
            prod = v1 * v2
            if not (prod < 0.0 or (closed and prod <= 0.0)):
                continue
        total += s1 - s0
    return total * seglen


@njit(cache=True, nogil=True)
def clip_length(x0, y0, x1, y1, px, py, ex, ey, alpha, full, rmin, rmax):
    """Allocation-per-call wrapper of :func:`clip_length_buf`."""
    return clip_length_buf(x0, y0, x1, y1, px, py, ex, ey, alpha, full, rmin, rmax, np.empty(8))


@njit(cache=True, nogil=True)
def classify_disc(cx, cy, rad, px, py, ex, ey, ca, sa, full, rmin, rmax):
    """OUT / IN / STRADDLE status of the closed disc B(c, rad) against a cone.

    ``ca, sa`` are cos and sin of the aperture; angles are compared through
    their tangents so no inverse trigonometry is needed.
    """
    vx = cx - px
    vy = cy - py
    d2 = vx * vx + vy * vy
    d = math.sqrt(d2)
    if d - rad > rmax or d + rad <= rmin:
        return 0
    if d <= rad:
        return 2
    radial_in = d - rad > rmin and d + rad <= rmax
    if full:
        return 1 if radial_in else 2
    # phi: angle of c - p to the axis line; s: angular radius of the disc
    along = abs(vx * ex + vy * ey)
    across = abs(vx * ey - vy * ex)
    ss = rad / d
    cs = math.sqrt(1.0 - ss * ss)
    cb = ca * cs - sa * ss  # cos(alpha + s)
    sb = sa * cs + ca * ss
    if cb > 0.0 and across * cb >= along * sb:
        return 0
    sg = sa * cs - ca * ss  # sin(alpha - s)
    cg = ca * cs + sa * ss
    if sg > 0.0 and radial_in and across * cg < along * sg:
        return 1
    return 2


def segment_cone_clip_length(seg: Segment, c: Cone) -> float:
    """One-dimensional measure of ``seg`` inside ``c``, computed analytically."""
    return float(
        clip_length(
            seg.a[0], seg.a[1], seg.b[0], seg.b[1],
            c.apex[0], c.apex[1], math.cos(c.theta), math.sin(c.theta),
            c.aperture, False, c.r_min, c.r_max,
        )
    )


def segment_ball_clip_length(seg: Segment, center, r: float) -> float:
    return float(
        clip_length(
            seg.a[0], seg.a[1], seg.b[0], seg.b[1],
            float(center[0]), float(center[1]), 1.0, 0.0, 0.0, True, 0.0, float(r),
        )
    )
