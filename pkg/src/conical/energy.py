"""Measure queries and conical-energy quadrature over both constructions.

A measure handle answers cone and ball mass queries as certified intervals.
Arclength measures on polylines (any :class:`Polyline` or an :class:`EnSet`
union) are exact, so ``lo == hi``.  The ball-tree measure returns brackets
from pruned descent.

The energy of ``mu`` at ``x`` in direction ``theta`` is

    int_0^R (mu(K(x, theta, alpha, r)) / r)^p dr / r,

truncated below ``r_min`` and integrated with the trapezoid rule in
``log r`` on a geometric grid.  Because cone mass is non-decreasing in
``r``, each grid cell also yields a rigorous enclosure of its integral.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from . import jm as jmmod
from .en import LAYERS, EnPoint, EnSet
from .geometry import Cone, Polyline, clip_length_buf

DEFAULT_TOL = 1e-3
DEFAULT_GRID_RATIO = 2.0 ** 0.25


@dataclass(frozen=True)
class MassInterval:
    lo: float
    hi: float
    flagged: bool = False

    def __post_init__(self):
        if not 0.0 <= self.lo <= self.hi:
            raise ValueError(f"invalid mass interval [{self.lo}, {self.hi}]")

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, x: float, slack: float = 0.0) -> bool:
        return self.lo - slack <= x <= self.hi + slack


# ---------------------------------------------------------------------------------
# measure handles


@njit(cache=True, nogil=True)
def _polyline_profile(seg, px, py, thetas, alpha, full, radii, rmin):
    nt = thetas.shape[0]
    nr = radii.shape[0]
    out = np.zeros((nt, nr))
    brk = np.empty(8)
    rmax = radii[0]
    for s in range(seg.shape[0]):
        x0 = seg[s, 0]
        y0 = seg[s, 1]
        x1 = seg[s, 2]
        y1 = seg[s, 3]
        # distance from the apex to the segment prunes far pieces
        dx = x1 - x0
        dy = y1 - y0
        ll = dx * dx + dy * dy
        t = 0.0 if ll == 0.0 else ((px - x0) * dx + (py - y0) * dy) / ll
        t = min(1.0, max(0.0, t))
        if math.hypot(x0 + t * dx - px, y0 + t * dy - py) > rmax:
            continue
        for i in range(nt):
            ex = math.cos(thetas[i])
            ey = math.sin(thetas[i])
            for j in range(nr):
                if radii[j] <= rmin:
                    continue
                v = clip_length_buf(x0, y0, x1, y1, px, py, ex, ey, alpha, full, rmin, radii[j], brk)
                if v == 0.0 and not full:
                    # every smaller radius sees a subset of this
                    break
                out[i, j] += v
    return out


class MeasureHandle:
    """Common query surface: ``profile`` does the work, the rest wraps it."""

    total_mass: float

    def profile(self, x, thetas, alpha, radii, full=False, tol=DEFAULT_TOL):
        """``lo, hi, flags`` for cone (or ball) masses on decreasing radii."""
        raise NotImplementedError

    def position(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float)


@dataclass(frozen=True, eq=False)
class PolylineMeasure(MeasureHandle):
    """Arclength on a polyline."""

    polyline: Polyline

    def __post_init__(self):
        seg = np.ascontiguousarray(np.hstack([self.polyline.starts, self.polyline.ends]))
        object.__setattr__(self, "_seg", seg)
        object.__setattr__(self, "total_mass", self.polyline.arclength)

    def profile(self, x, thetas, alpha, radii, full=False, tol=DEFAULT_TOL, r_min=0.0):
        radii = _check_radii(radii)
        th = np.ascontiguousarray(np.atleast_1d(thetas), dtype=float)
        p = self.position(x)
        m = _polyline_profile(self._seg, float(p[0]), float(p[1]), th, float(alpha), bool(full),
                              radii, float(r_min))
        return m, m.copy(), np.zeros(len(th), dtype=bool)


@dataclass(frozen=True, eq=False)
class EnMeasure(MeasureHandle):
    """Arclength on the union of the constructed layers of an :class:`EnSet`."""

    en: EnSet
    depth: int = LAYERS

    def __post_init__(self):
        object.__setattr__(self, "total_mass", float(self.en.union_lengths[self.depth]))

    def position(self, x) -> np.ndarray:
        return self.en.position(x) if isinstance(x, EnPoint) else np.asarray(x, dtype=float)

    def profile(self, x, thetas, alpha, radii, full=False, tol=DEFAULT_TOL):
        radii = _check_radii(radii)
        th = np.atleast_1d(np.asarray(thetas, dtype=float))
        m = self.en.cone_mass_grid(x, th, alpha, radii, full=full, depth=self.depth)
        return m, m.copy(), np.zeros(len(th), dtype=bool)


@dataclass(frozen=True, eq=False)
class JmMeasure(MeasureHandle):
    """The ball-tree measure in absolute units, refined at most ``levels`` generations."""

    params: jmmod.JmParams = jmmod.JmParams()
    levels: int = 8
    frontier_limit: int = 1 << 16

    def __post_init__(self):
        object.__setattr__(self, "total_mass", 1.0)
        object.__setattr__(self, "_frame", jmmod.global_frame(self.params, self.levels))

    def position(self, x) -> np.ndarray:
        if isinstance(x, jmmod.JmPoint):
            return x.position(self.params)
        return np.asarray(x, dtype=float)

    def profile(self, x, thetas, alpha, radii, full=False, tol=DEFAULT_TOL, levels=None):
        radii = _check_radii(radii)
        return jmmod.frame_profile(self._frame, self.position(x), np.atleast_1d(thetas), alpha,
                                   full, radii, tol, levels=levels,
                                   frontier_limit=self.frontier_limit)[:3]


def _check_radii(radii) -> np.ndarray:
    radii = np.ascontiguousarray(np.atleast_1d(radii), dtype=float)
    if radii.size == 0 or radii[-1] <= 0 or np.any(np.diff(radii) >= 0):
        raise ValueError("radii must be positive and strictly decreasing")
    return radii


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < math.pi / 2:
        raise ValueError("aperture must lie in (0, pi/2)")


def cone_mass(m: MeasureHandle, c: Cone, tol: float = DEFAULT_TOL) -> MassInterval:
    """Certified mass of ``m`` inside ``c`` (truncated at ``c.r_max``)."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not math.isfinite(c.r_max):
        raise ValueError("cone must be truncated")
    if c.r_min > 0:
        if not isinstance(m, PolylineMeasure):
            lo_o, hi_o, f_o = m.profile(c.apex, [c.theta], c.aperture, [c.r_max, c.r_min], tol=tol)
            lo = max(0.0, lo_o[0, 0] - hi_o[0, 1])
            return MassInterval(lo, max(lo, hi_o[0, 0] - lo_o[0, 1]), bool(f_o[0]))
        lo, hi, f = m.profile(c.apex, [c.theta], c.aperture, [c.r_max], tol=tol, r_min=c.r_min)
    else:
        lo, hi, f = m.profile(c.apex, [c.theta], c.aperture, [c.r_max], tol=tol)
    return MassInterval(float(lo[0, 0]), float(hi[0, 0]), bool(f[0]))


def ball_mass(m: MeasureHandle, center, r: float, tol: float = DEFAULT_TOL) -> MassInterval:
    if r <= 0:
        raise ValueError("radius must be positive")
    lo, hi, f = m.profile(center, [0.0], 0.1, [r], full=True, tol=tol)
    return MassInterval(float(lo[0, 0]), float(hi[0, 0]), bool(f[0]))


# ---------------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class EnergyQuadrature:
    """Trapezoid rule in ``log r`` on ``R q^{-i}`` down to ``r_min``."""

    r_min: float
    p: float = 1.0
    grid_ratio: float = DEFAULT_GRID_RATIO

    def __post_init__(self):
        if not self.grid_ratio > 1.0:
            raise ValueError("grid ratio must exceed 1")
        if not self.r_min > 0.0:
            raise ValueError("r_min must be positive")
        if not self.p >= 1.0:
            raise ValueError("exponent must be >= 1")

    def refined(self) -> "EnergyQuadrature":
        """Same quadrature on the grid with every cell split in two (nested)."""
        return EnergyQuadrature(self.r_min, self.p, math.sqrt(self.grid_ratio))

    def grid(self, R: float) -> np.ndarray:
        if not R > self.r_min:
            raise ValueError("R must exceed r_min")
        n = int(math.floor(math.log(R / self.r_min) / math.log(self.grid_ratio) + 1e-9))
        radii = R * self.grid_ratio ** -np.arange(n + 1, dtype=float)
        if radii[-1] > self.r_min * (1.0 + 1e-12):
            radii = np.append(radii, self.r_min)
        else:
            radii[-1] = self.r_min
        return radii

    def integrate(self, radii, lo, hi):
        """``(value, err, lower, upper)`` along the last axis of ``lo, hi``."""
        radii = np.asarray(radii, dtype=float)
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        p = self.p
        w = np.log(radii[:-1] / radii[1:])
        f = (0.5 * (lo + hi) / radii) ** p
        value = (0.5 * (f[..., :-1] + f[..., 1:]) * w).sum(-1)
        # cell [a, b] with a < b: mass(a)/b <= mass(r)/r <= mass(b)/a
        lower = ((lo[..., 1:] / radii[:-1]) ** p * w).sum(-1)
        upper = ((hi[..., :-1] / radii[1:]) ** p * w).sum(-1)
        err = np.maximum(value - lower, upper - value)
        return value, err, lower, upper


@dataclass(frozen=True)
class EnergyEstimate:
    value: float
    err: float
    lower: float
    upper: float
    r_min: float
    tail_density: float  # (mass(r_min) / r_min)^p, scale of the neglected part
    flagged: bool = False


def _estimates(quad, radii, lo, hi, flags):
    v, e, lw, up = quad.integrate(radii, lo, hi)
    tail = (hi[..., -1] / radii[-1]) ** quad.p
    return [EnergyEstimate(float(v[i]), float(e[i]), float(lw[i]), float(up[i]), float(radii[-1]),
                           float(tail[i]), bool(flags[i])) for i in range(len(v))]


def conical_energy(m: MeasureHandle, x, theta: float, alpha: float, R: float,
                   quad: EnergyQuadrature, tol: float = DEFAULT_TOL) -> EnergyEstimate:
    _check_alpha(alpha)
    if R <= 0:
        raise ValueError("R must be positive")
    radii = quad.grid(R)
    lo, hi, f = m.profile(x, [theta], alpha, radii, tol=tol)
    return _estimates(quad, radii, lo, hi, f)[0]


def energies_over_directions(m: MeasureHandle, x, thetas, alpha, R, quad, tol=DEFAULT_TOL):
    _check_alpha(alpha)
    radii = quad.grid(R)
    lo, hi, f = m.profile(x, thetas, alpha, radii, tol=tol)
    return _estimates(quad, radii, lo, hi, f)


def theta_grid(step: float) -> np.ndarray:
    n = int(math.ceil(math.pi / step - 1e-9))
    return np.arange(n) * (math.pi / n)


@dataclass(frozen=True)
class DirectionScan:
    thetas: np.ndarray
    energies: np.ndarray
    errors: np.ndarray

    @property
    def argmin(self) -> int:
        """Index of the minimum; ties resolve to the middle of the longest cyclic run."""
        e = self.energies
        tie = e <= e.min() * (1.0 + 1e-12) + 1e-300
        if tie.all():
            return 0
        n = len(e)
        start = int(np.argmin(tie))  # a non-tied index, so runs do not wrap past it
        best, best_len, run = 0, 0, 0
        for s in range(1, n + 1):
            i = (start + s) % n
            run = run + 1 if tie[i] else 0
            if run > best_len:
                best_len, best = run, i
        return (best - (best_len - 1) // 2) % n

    @property
    def theta_star(self) -> float:
        return float(self.thetas[self.argmin])

    @property
    def min(self) -> float:
        return float(self.energies.min())

    @property
    def max(self) -> float:
        return float(self.energies.max())


def direction_min_energy(m: MeasureHandle, x, alpha: float, R: float, quad: EnergyQuadrature,
                         theta_step: float | None = None, tol: float = DEFAULT_TOL) -> DirectionScan:
    """Energies on an even grid over ``[0, pi)`` and the minimising direction."""
    step = alpha / 16.0 if theta_step is None else theta_step
    if step > alpha / 8.0 + 1e-15:
        raise ValueError("theta step must be at most alpha/8")
    th = theta_grid(step)
    est = energies_over_directions(m, x, th, alpha, R, quad, tol)
    return DirectionScan(th, np.array([e.value for e in est]), np.array([e.err for e in est]))


@dataclass(frozen=True)
class CarlesonResult:
    value: float
    stderr: float
    samples: int
    strata: dict = field(default_factory=dict)


def carleson_statistic(m: EnMeasure, center, radius: float, alpha: float, quad: EnergyQuadrature,
                       samples: int, seed: int = 0, theta_step: float | None = None,
                       R: float | None = None) -> CarlesonResult:
    """Mean over ``x in B`` of the direction-minimised energy, stratified.

    The bad set carries a tiny fraction of the mass but dominates the mean,
    so it is sampled as its own stratum; the remainder of the union is the
    other.  Stratum masses inside ``B`` are the exact stratum masses times
    the rejection acceptance rate (exact when ``B`` covers the set).
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    en = m.en
    R = radius if R is None else R
    rng = np.random.default_rng(seed)
    c = np.asarray(center, dtype=float)
    bad_total = en.bad_length
    rest_total = m.total_mass - bad_total

    def draw_bad():
        path = tuple(int(j) for j in rng.integers(en.n_slots, size=LAYERS + 1))
        h = en.params.slot_half_width
        return EnPoint(path[:LAYERS], en.slot_mids[path[-1]] + h * (2.0 * rng.random() - 1.0))

    def draw_rest():
        while True:
            p = en.sample_point(rng)
            if not en.on_bad_set(p):
                return p

    strata = {}
    for name, draw, total in (("bad", draw_bad, bad_total), ("rest", draw_rest, rest_total)):
        vals = []
        tries = 0
        while len(vals) < samples and tries < 100 * samples:
            tries += 1
            p = draw()
            if np.hypot(*(en.position(p) - c)) >= radius:
                continue
            vals.append(direction_min_energy(m, p, alpha, R, quad, theta_step).min)
        vals = np.array(vals)
        frac = len(vals) / max(tries, 1)
        mean = float(vals.mean()) if len(vals) else 0.0
        se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
        strata[name] = dict(mass=total * frac, mean=mean, stderr=se, n=len(vals))
    mass = sum(s["mass"] for s in strata.values())
    if mass == 0:
        return CarlesonResult(0.0, 0.0, 0, strata)
    value = sum(s["mass"] * s["mean"] for s in strata.values()) / mass
    stderr = math.sqrt(sum((s["mass"] * s["stderr"]) ** 2 for s in strata.values())) / mass
    return CarlesonResult(value, stderr, sum(s["n"] for s in strata.values()), strata)


# ---------------------------------------------------------------------------------
# deep energies on the ball tree


@dataclass(frozen=True)
class DeepEnergy:
    """Per-generation energy increments with certified brackets.

    ``lo, hi, value`` have shape ``(K_max + 1, len(thetas))``; row ``k`` is the
    contribution of scale ``k`` (row 0 is unused).
    """

    thetas: np.ndarray
    pexp: float
    lo: np.ndarray
    hi: np.ndarray
    value: np.ndarray
    flags: np.ndarray

    @property
    def K_max(self) -> int:
        return self.value.shape[0] - 1

    def partial(self, K: int) -> np.ndarray:
        return self.value[1:K + 1].sum(0)

    def partial_bounds(self, K: int):
        return self.lo[1:K + 1].sum(0), self.hi[1:K + 1].sum(0)


def _deep_setup(params, K_max, address, levels):
    if K_max > params.depth_cap:
        raise ValueError(f"K_max = {K_max} exceeds the depth cap {params.depth_cap}")
    need = K_max + levels + 10
    a = jmmod.middle_address(params, need) if address is None else tuple(address)
    return jmmod.apex_vectors(params, a, K_max)


def jm_energy_deep(params: jmmod.JmParams, thetas: Sequence[float], alpha: float, K_max: int,
                   pexp: float = 1, address=None, tol: float = DEFAULT_TOL, levels: int = 6,
                   samples_per_octave: int = 4) -> DeepEnergy:
    """Energy restricted to the scale blocks ``[2 r_k, 4 r_k]``, ``k = 1..K_max``.

    Each block is evaluated in the scale-``k`` frame, where only the subtree of
    the generation ``k-1`` ancestor can reach the cone, and the integrand is
    rescaled by ``mu(B_k) / r_k``.  The blocks are disjoint, so their sum is a
    lower bound for the full energy.
    """
    _check_alpha(alpha)
    vecs = _deep_setup(params, K_max, address, levels)
    th = np.atleast_1d(np.asarray(thetas, dtype=float))
    radii = 2.0 ** np.linspace(2.0, 1.0, samples_per_octave + 1)
    quad = EnergyQuadrature(radii[-1], pexp, 2.0 ** (1.0 / samples_per_octave))
    shape = (K_max + 1, len(th))
    lo, hi, val = np.zeros(shape), np.zeros(shape), np.zeros(shape)
    flags = np.zeros(shape, dtype=bool)
    for k in range(1, K_max + 1):
        fr = jmmod.local_frame(params, k, levels, vecs)
        mlo, mhi, f, _ = jmmod.frame_profile(fr, fr.apex, th, alpha, False, radii, tol, atol=tol)
        v, _, lw, up = quad.integrate(radii, fr.density * mlo, fr.density * mhi)
        val[k], lo[k], hi[k], flags[k] = v, lw, up, f
    return DeepEnergy(th, pexp, lo, hi, val, flags)


def jm_ball_density_increments(params: jmmod.JmParams, K_max: int, address=None,
                               tol: float = DEFAULT_TOL, levels: int = 6,
                               grid_ratio: float = DEFAULT_GRID_RATIO) -> DeepEnergy:
    """``int_{r_{k+1}}^{r_k} (mu(B(x, r)) / r)^2 dr / r`` for ``k = 1..K_max``.

    These dominate the squared cone energy scale by scale, so their sum is an
    upper bound for the full energy with exponent 2 down to ``r_{K_max+1}``.
    """
    vecs = _deep_setup(params, K_max, address, levels)
    shape = (K_max + 1, 1)
    lo, hi, val = np.zeros(shape), np.zeros(shape), np.zeros(shape)
    flags = np.zeros(shape, dtype=bool)
    for k in range(1, K_max + 1):
        fr = jmmod.local_frame(params, k, levels, vecs)
        quad = EnergyQuadrature(float(fr.rad[2]), 2.0, grid_ratio)
        radii = quad.grid(1.0)
        mlo, mhi, f, _ = jmmod.frame_profile(fr, fr.apex, [0.0], 0.5, True, radii, tol,
                                             atol=0.1 * tol)
        v, _, lw, up = quad.integrate(radii, fr.density * mlo, fr.density * mhi)
        val[k], lo[k], hi[k], flags[k] = v, lw, up, f
    return DeepEnergy(np.zeros(1), 2.0, lo, hi, val, flags)


def jm_cone_ball_domination(params: jmmod.JmParams, thetas: Sequence[float], alpha: float,
                            K_max: int, address=None, levels: int = 3,
                            samples_per_octave: int = 4) -> int:
    """Number of (k, theta, r) grid points where a cone bracket exceeds the ball bracket.

    Both brackets come from the same fixed-depth expansion (no tolerance
    stopping), so each is compared on equal footing.
    """
    vecs = _deep_setup(params, K_max, address, levels)
    th = np.atleast_1d(np.asarray(thetas, dtype=float))
    radii = 2.0 ** np.linspace(2.0, 1.0, samples_per_octave + 1)
    bad = 0
    for k in range(1, K_max + 1):
        fr = jmmod.local_frame(params, k, levels, vecs)
        clo, chi, _, _ = jmmod.frame_profile(fr, fr.apex, th, alpha, False, radii, 0.0)
        blo, bhi, _, _ = jmmod.frame_profile(fr, fr.apex, [0.0], 0.5, True, radii, 0.0)
        # masses are sums over up to ~10^5 children, so allow that many roundings
        slack = 1e-9 * bhi[0]
        bad += int(np.sum(clo > blo[0] + slack) + np.sum(chi > bhi[0] + slack))
    return bad


def fit_log_over_square(k: np.ndarray, inc: np.ndarray):
    """Best constant ``C`` (geometric mean) for ``inc ~ C log k / k^2`` and the spread."""
    ratio = inc * k.astype(float) ** 2 / np.log(k)
    C = float(np.exp(np.mean(np.log(ratio))))
    return C, float(ratio.max() / ratio.min())
