"""Lazy ball tree of a Cantor-type measure with rotating generations.

A ball of generation ``k`` has ``m_{k+1} = M (k+1)`` children of radius
``r_{k+1}`` whose centres sit evenly on the diameter at angle
``A_{k+1} = alpha_1 + ... + alpha_{k+1}``, the two extreme children touching
the parent's boundary from inside.  Every child receives an equal share of
the parent's mass, so a generation-``k`` ball has mass ``1 / m(k)`` with
``m(k) = M^k k!``.

Masses and radius products live in log space.  Deep queries run in a local
frame anchored at the generation ``k-1`` ancestor with unit length ``r_k``
and unit mass ``mu(B_k)``, where all numbers are O(1).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np
from numba import njit

from .geometry import classify_disc, normalize_angle


@dataclass(frozen=True)
class BetaRule:
    """``beta_k = 1 - c / (k + 1)``; ``c = 1/2`` gives ``beta_1 = 3/4``."""

    c: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.c < 1.0:
            raise ValueError("c must lie in (0, 1) so that 1/2 < beta_k < 1")

    def __call__(self, k):
        return 1.0 - self.c / (np.asarray(k, dtype=float) + 1.0)

    def exact(self, k: int) -> Fraction:
        return 1 - Fraction(self.c).limit_denominator(10**9) / (k + 1)


@dataclass(frozen=True)
class JmParams:
    M: int = 3
    beta: BetaRule = BetaRule()
    depth_cap: int = 1 << 15

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 3:
            raise ValueError(f"M must be an integer >= 3, got {self.M!r}")
        if self.depth_cap < 1:
            raise ValueError("depth_cap must be positive")


def dyadic_block(k: int) -> int:
    """``n`` with ``2^n <= k < 2^{n+1}``."""
    if k < 1:
        raise ValueError("generation index must be >= 1")
    return k.bit_length() - 1


def rotation_step(k: int) -> float:
    """``alpha_k = 2^{-n} pi`` for ``k`` in block ``n``."""
    return math.ldexp(math.pi, -dyadic_block(k))


def axis_fraction(k: int) -> Fraction:
    """``A_k / pi`` reduced into ``[0, 1)``, exact."""
    if k == 0:
        return Fraction(0)
    n = dyadic_block(k)
    f = Fraction(k - (1 << n) + 1, 1 << n)
    return f - 1 if f >= 1 else f


@dataclass(frozen=True, eq=False)
class GenerationTable:
    """Per-generation constants for ``g = 0..size-1``."""

    params: JmParams
    size: int

    def __post_init__(self):
        g = np.arange(self.size, dtype=float)
        M = self.params.M
        k = np.arange(1, self.size, dtype=float)
        ln_sigma = np.concatenate([[0.0], self.params.beta(k) * np.log1p(1.0 / k)])
        m = np.concatenate([[1], M * np.arange(1, self.size)]).astype(np.int64)
        ln_mfact = np.concatenate([[0.0], np.cumsum(np.log(m[1:].astype(float)))])
        ln_prod_sigma = np.cumsum(ln_sigma)
        ln_r = ln_prod_sigma - ln_mfact - math.log(2.0)
        # r_{g+1}/r_g and d_{g+1}/r_g, both exact from the defining ratios
        nxt = np.arange(1, self.size + 1, dtype=float)
        sig_next = np.exp(self.params.beta(nxt) * np.log1p(1.0 / nxt))
        m_next = M * nxt
        shrink = sig_next / m_next
        gap = 2.0 * (1.0 - shrink) / (m_next - 1.0)
        frac = np.array([float(axis_fraction(int(i))) for i in range(self.size + 1)])
        for name, val in dict(
            g=g, ln_sigma=ln_sigma, m=m, ln_mfact=ln_mfact, ln_prod_sigma=ln_prod_sigma,
            ln_r=ln_r, shrink=shrink, gap=gap, axis=math.pi * frac,
        ).items():
            object.__setattr__(self, name, val)


@lru_cache(maxsize=8)
def generation_table(params: JmParams, size: int) -> GenerationTable:
    return GenerationTable(params, size)


def _table(params: JmParams, need: int) -> GenerationTable:
    size = 256
    while size < need:
        size *= 2
    return generation_table(params, size)


@dataclass(frozen=True)
class BallNode:
    generation: int
    center: tuple
    radius: float
    axis_angle: float
    log_mass: float
    address: tuple


Address = tuple


@dataclass(frozen=True)
class JmPoint:
    """Limit point of an address, known to ``len(address) - 8`` generations."""

    address: Address

    def position(self, params: JmParams) -> np.ndarray:
        return 0.5 * apex_vectors(params, self.address, max(0, len(self.address) - 8))[0]


def middle_address(params: JmParams, length: int) -> Address:
    """Middle child at every generation (lower middle when the count is even)."""
    return tuple((params.M * (i + 1) - 1) // 2 for i in range(length))


def validate_address(params: JmParams, a: Sequence[int]) -> None:
    for i, c in enumerate(a):
        if not 0 <= c < params.M * (i + 1):
            raise ValueError(f"address entry {i} = {c} outside [0, {params.M * (i + 1)})")


def root(params: JmParams) -> BallNode:
    return BallNode(0, (0.0, 0.0), 0.5, 0.0, 0.0, ())


def children(params: JmParams, node: BallNode) -> list:
    k = node.generation
    if k >= params.depth_cap:
        raise ValueError(f"generation {k} is at the depth cap {params.depth_cap}")
    t = _table(params, k + 2)
    m = int(t.m[k + 1])
    d = node.radius * t.gap[k]
    ang = t.axis[k + 1]
    ux, uy = math.cos(ang), math.sin(ang)
    r = node.radius * t.shrink[k]
    lm = node.log_mass - math.log(m)
    out = []
    for i in range(m):
        off = (i - (m - 1) / 2.0) * d
        c = (node.center[0] + off * ux, node.center[1] + off * uy)
        out.append(BallNode(k + 1, c, r, ang, lm, node.address + (i,)))
    return out


def point_at(params: JmParams, a: Sequence[int], k: int) -> np.ndarray:
    """Centre of the generation-``k`` ball along ``a``."""
    if len(a) < k:
        raise ValueError("address shorter than requested generation")
    validate_address(params, a[:k])
    t = _table(params, k + 2)
    c = np.zeros(2)
    r = 0.5
    for g in range(k):
        m = int(t.m[g + 1])
        off = (a[g] - (m - 1) / 2.0) * r * t.gap[g]
        c = c + off * np.array([math.cos(t.axis[g + 1]), math.sin(t.axis[g + 1])])
        r *= t.shrink[g]
    return c


def radius(params: JmParams, k: int) -> float:
    return float(math.exp(_table(params, k + 1).ln_r[k]))


def log_radius(params: JmParams, k: int) -> float:
    return float(_table(params, k + 1).ln_r[k])


def log_mass(params: JmParams, k: int) -> float:
    """``ln mu(B) = -ln m(k)`` for a generation-``k`` ball."""
    return -float(_table(params, k + 1).ln_mfact[k])


def sigma_factor(params: JmParams, k: int) -> float:
    return float(((k + 1) / k) ** params.beta(k))


def mass_ratio_bk(params: JmParams, k: int) -> float:
    """``mu(B_k) / (2 r_k) = (sigma_1 ... sigma_k)^{-1}``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return float(math.exp(-_table(params, k + 1).ln_prod_sigma[k]))


def mass_ratio_lower_bound_holds(params: JmParams, k: int) -> bool:
    """``(sigma_1...sigma_k)^{-1} >= 1/(k+1)``, decided without rounding.

    Each factor satisfies ``((i+1)/i)^{beta_i} < (i+1)/i`` because ``beta_i < 1``
    (checked in rationals), and the product of ``(i+1)/i`` telescopes to
    ``k + 1`` (also checked in rationals).
    """
    prod = Fraction(1)
    for i in range(1, k + 1):
        if not params.beta.exact(i) < 1:
            return False
        prod *= Fraction(i + 1, i)
    return prod == k + 1


def is_good_index(k: int, theta: float, alpha: float) -> bool:
    n = dyadic_block(k)
    return abs((k - (1 << n) + 1) * math.pi / (1 << n) - theta) <= alpha / 16.0


def n0_for(alpha: float, M: int, beta: BetaRule = BetaRule()) -> int:
    """Smallest block index where both smallness conditions hold.

    ``sigma_{k+1} / (M (k+1))`` decreases in ``k``, so the second condition
    only needs checking at ``k = 2^{N_0}``.
    """
    if not 0.0 < alpha < math.pi / 2:
        raise ValueError("alpha must lie in (0, pi/2)")
    n = 0
    while True:
        k = 1 << n
        sig = ((k + 2) / (k + 1)) ** float(beta(k + 1))
        if math.ldexp(math.pi, -n) < alpha / 100.0 and sig / (M * (k + 1)) <= math.sin(alpha / 50.0) / 2.0:
            return n
        n += 1


def good_index_count(N: int, theta: float, alpha: float, M: int = 3) -> int:
    """Good indices in the block ``[2^N, 2^{N+1})``."""
    if not math.ldexp(math.pi, -N) < alpha / 100.0:
        raise ValueError(f"block {N} is below N0 = {n0_for(alpha, M)}")
    # |j pi / 2^N - theta| <= alpha/16 for j = k - 2^N + 1 in 1..2^N
    lo = max(1, math.ceil((theta - alpha / 16.0) * (1 << N) / math.pi) - 1)
    hi = min(1 << N, math.floor((theta + alpha / 16.0) * (1 << N) / math.pi) + 1)
    return sum(1 for j in range(lo, hi + 1) if is_good_index(j + (1 << N) - 1, theta, alpha))


def good_index_count_bruteforce(N: int, theta: float, alpha: float) -> int:
    return sum(1 for k in range(1 << N, 2 << N) if is_good_index(k, theta, alpha))


# ---------------------------------------------------------------------------------
# materialised generations (small depth only)


def generation_arrays(params: JmParams, k: int):
    """Centres, parent ids and shared radius of every generation-``k`` ball."""
    t = _table(params, k + 2)
    centers = np.zeros((1, 2))
    parent = np.zeros(1, dtype=np.int64)
    r = 0.5
    for g in range(k):
        m = int(t.m[g + 1])
        d = r * t.gap[g]
        u = np.array([math.cos(t.axis[g + 1]), math.sin(t.axis[g + 1])])
        offs = (np.arange(m) - (m - 1) / 2.0) * d
        parent = np.repeat(np.arange(len(centers)), m)
        centers = (centers[:, None, :] + offs[None, :, None] * u[None, None, :]).reshape(-1, 2)
        r *= t.shrink[g]
    return centers, parent, r


def mass_conservation_defect(params: JmParams, k: int) -> float:
    """``|ln(sum of children masses) - ln(parent mass)|`` at generation ``k``."""
    m = params.M * (k + 1)
    child = log_mass(params, k + 1)
    return abs(math.log(m) + child - log_mass(params, k))


def tangency_defect(params: JmParams, k: int) -> float:
    """Relative gap ``|(|c_child - c| + r_{k+1}) / r_k - 1|`` for extreme children."""
    t = _table(params, k + 2)
    m = int(t.m[k + 1])
    return abs((m - 1) / 2.0 * t.gap[k] + t.shrink[k] - 1.0)


def disjointness_audit(params: JmParams, k: int):
    """Pairs of generation-``k`` balls that meet without sharing a parent."""
    from scipy.spatial import cKDTree

    centers, parent, r = generation_arrays(params, k)
    pairs = cKDTree(centers).query_pairs(2.0 * r, output_type="ndarray")
    if len(pairs) == 0:
        return pairs
    bad = parent[pairs[:, 0]] != parent[pairs[:, 1]]
    return pairs[bad]


def export_generation_csv(params: JmParams, k: int, path) -> None:
    centers, _, r = generation_arrays(params, k)
    lm = log_mass(params, k)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "radius", "log_mass"])
        for x, y in centers:
            w.writerow([repr(float(x)), repr(float(y)), repr(r), repr(lm)])


# ---------------------------------------------------------------------------------
# local frames


@dataclass(frozen=True)
class LocalFrame:
    """Scale-``k`` frame: origin at the ``k-1`` ancestor, unit ``r_k``, mass unit ``mu(B_k)``."""

    k: int
    rad: np.ndarray
    mass: np.ndarray
    nchild: np.ndarray
    spacing: np.ndarray
    ux: np.ndarray
    uy: np.ndarray
    apex: np.ndarray
    density: float  # mu(B_k) / r_k


def apex_vectors(params: JmParams, a: Sequence[int], upto: int) -> np.ndarray:
    """``(x - c_j) / r_j`` for ``j = 0..upto``, ``x`` the limit point of ``a``.

    The backward recurrence starts eight generations past ``upto``, where the
    truncation error is below ``r_{upto+8} / r_upto``.
    """
    stop = upto + 8
    if len(a) < stop:
        raise ValueError(f"address needs at least {stop} entries")
    validate_address(params, a[:stop])
    t = _table(params, stop + 2)
    v = np.zeros((stop + 1, 2))
    for j in range(stop - 1, -1, -1):
        m = int(t.m[j + 1])
        off = (a[j] - (m - 1) / 2.0) * t.gap[j]
        ang = t.axis[j + 1]
        v[j, 0] = off * math.cos(ang) + t.shrink[j] * v[j + 1, 0]
        v[j, 1] = off * math.sin(ang) + t.shrink[j] * v[j + 1, 1]
    return v[: upto + 1]


def local_frame(params: JmParams, k: int, levels: int, vecs: np.ndarray) -> LocalFrame:
    if k < 1:
        raise ValueError("local frames start at k = 1")
    g0 = k - 1
    t = _table(params, g0 + levels + 3)
    gens = np.arange(g0, g0 + levels + 1)
    ln_rk = t.ln_r[k]
    rad = np.exp(t.ln_r[gens] - ln_rk)
    mass = np.exp(t.ln_mfact[k] - t.ln_mfact[gens])
    nchild = t.m[gens + 1].astype(np.int64)
    spacing = np.exp(np.log(t.gap[gens]) + t.ln_r[gens] - ln_rk)
    ang = t.axis[gens + 1]
    apex = vecs[k - 1] * math.exp(t.ln_r[k - 1] - ln_rk)
    density = 2.0 * math.exp(-t.ln_prod_sigma[k])
    return LocalFrame(k, rad, mass, nchild, spacing, np.cos(ang), np.sin(ang), apex, density)


def global_frame(params: JmParams, levels: int) -> LocalFrame:
    """The whole tree from ``E_0`` (radius 1/2, mass 1) in absolute units."""
    t = _table(params, levels + 3)
    gens = np.arange(0, levels + 1)
    rad = np.exp(t.ln_r[gens])
    mass = np.exp(-t.ln_mfact[gens])
    spacing = rad * t.gap[gens]
    ang = t.axis[gens + 1]
    return LocalFrame(0, rad, mass, t.m[gens + 1].astype(np.int64), spacing,
                      np.cos(ang), np.sin(ang), np.zeros(2), 1.0)


def frame_profile(frame: LocalFrame, apex, thetas, alpha, full, radii_desc, tol, levels=None,
                  atol=0.0, frontier_limit=1 << 14):
    """Certified cumulative masses for every direction and radius in a frame.

    Refinement stops once every radius has ``hi - lo <= tol * hi`` or
    ``hi - lo <= atol`` (masses in frame units).  Returns ``lo, hi`` of shape
    ``(len(thetas), len(radii))``, a per-direction flag set when the tolerance
    was not reached, and the levels expanded.
    """
    L = len(frame.rad) - 1 if levels is None else levels
    radii_desc = np.ascontiguousarray(radii_desc, dtype=float)
    if np.any(np.diff(radii_desc) >= 0) or radii_desc[-1] <= 0:
        raise ValueError("radii must be positive and strictly decreasing")
    return jm_profile_batch(
        frame.rad, frame.mass, frame.nchild, frame.spacing, frame.ux, frame.uy, L,
        float(apex[0]), float(apex[1]),
        np.ascontiguousarray(np.atleast_1d(thetas), dtype=float),
        float(alpha), bool(full), radii_desc, float(tol), float(atol), int(frontier_limit),
    )


# ---------------------------------------------------------------------------------
# certified traversal kernel


@njit(cache=True, nogil=True)
def _shell(asc, x):
    n1 = asc.shape[0]
    return n1 - 1 - np.searchsorted(asc, x)


@njit(cache=True, nogil=True)
def _account(cx, cy, rad, m, ax, ay, ex, ey, ca, sa, full, asc, rout, lo_bin, hi_bin, expand):
    """Classify one disc; returns 0 settled, 1 needs refinement.

    When ``expand`` is false the disc is settled as unresolved: full mass to
    the upper bound from its nearest shell, and to the lower bound from its
    farthest shell if it lies angularly inside.
    """
    dist = math.hypot(cx - ax, cy - ay)
    dlo = dist - rad
    if dlo > rout:
        return 0
    if full:
        ang = 1
    else:
        ang = classify_disc(cx, cy, rad, ax, ay, ex, ey, ca, sa, False, 0.0, math.inf)
        if ang == 0:
            return 0
    s_out = _shell(asc, dist + rad)
    s_in = _shell(asc, dlo)
    if ang == 1 and s_out == s_in:
        lo_bin[s_in] += m
        hi_bin[s_in] += m
        return 0
    if expand:
        return 1
    if ang == 1 and s_out >= 0:
        lo_bin[s_out] += m
    hi_bin[s_in] += m
    return 0


@njit(cache=True, nogil=True)
def _jm_profile_one(rad, mass, nchild, spacing, ux, uy, L, ax, ay, theta, alpha, full,
                    asc, tol, atol, limit, lo_bin, hi_bin, cur, nxt):
    n1 = asc.shape[0]
    for i in range(n1):
        lo_bin[i] = 0.0
        hi_bin[i] = 0.0
    rout = asc[n1 - 1]
    ex = math.cos(theta)
    ey = math.sin(theta)
    ca = math.cos(alpha)
    sa = math.sin(alpha)
    snap_lo = np.empty(n1)
    snap_hi = np.empty(n1)
    gs0 = np.empty(256, np.int64)
    gs1 = np.empty(256, np.int64)
    ncur = 0
    if _account(0.0, 0.0, rad[0], mass[0], ax, ay, ex, ey, ca, sa, full, asc, rout,
                lo_bin, hi_bin, L > 0) == 1:
        cur[0, 0] = 0.0
        cur[0, 1] = 0.0
        ncur = 1
    level = 0
    flag = False
    while ncur > 0:
        # expand every unresolved ball at this level into its row of children
        nn = 0
        n = nchild[level]
        d = spacing[level]
        cr = rad[level + 1]
        cm = mass[level + 1]
        vx = ux[level]
        vy = uy[level]
        last = level + 1 == L
        for b in range(ncur):
            px = cur[b, 0]
            py = cur[b, 1]
            nn0 = nn
            for i in range(n1):
                snap_lo[i] = lo_bin[i]
                snap_hi[i] = hi_bin[i]
            overflow = False
            top = 1
            gs0[0] = 0
            gs1[0] = n
            while top > 0:
                top -= 1
                i0 = gs0[top]
                i1 = gs1[top]
                off = (0.5 * (i0 + i1 - 1) - 0.5 * (n - 1)) * d
                gx = px + off * vx
                gy = py + off * vy
                grad = 0.5 * (i1 - 1 - i0) * d + cr
                if i1 - i0 == 1:
                    if _account(gx, gy, grad, cm, ax, ay, ex, ey, ca, sa, full, asc, rout,
                                lo_bin, hi_bin, True) == 1:
                        if nn == limit:
                            overflow = True
                            break
                        nxt[nn, 0] = gx
                        nxt[nn, 1] = gy
                        nn += 1
                    continue
                if _account(gx, gy, grad, (i1 - i0) * cm, ax, ay, ex, ey, ca, sa, full,
                            asc, rout, lo_bin, hi_bin, True) == 1:
                    mid = (i0 + i1) // 2
                    gs0[top] = i0
                    gs1[top] = mid
                    gs0[top + 1] = mid
                    gs1[top + 1] = i1
                    top += 2
            if overflow:
                # no room for this row: roll back and settle the parent unrefined
                flag = True
                nn = nn0
                for i in range(n1):
                    lo_bin[i] = snap_lo[i]
                    hi_bin[i] = snap_hi[i]
                _account(px, py, rad[level], mass[level], ax, ay, ex, ey, ca, sa, full, asc,
                         rout, lo_bin, hi_bin, False)
        level += 1
        ncur = nn
        if ncur == 0:
            break
        # provisional settlement of the frontier decides whether to go deeper
        stop = last
        if not stop and (tol > 0.0 or atol > 0.0):
            plo = lo_bin.copy()
            phi = hi_bin.copy()
            for b in range(ncur):
                _account(nxt[b, 0], nxt[b, 1], cr, cm, ax, ay, ex, ey, ca, sa, full, asc,
                         rout, plo, phi, False)
            slo = 0.0
            shi = 0.0
            stop = True
            for i in range(n1 - 1, -1, -1):
                slo += plo[i]
                shi += phi[i]
                if shi - slo > tol * shi and shi - slo > atol:
                    stop = False
                    break
        if stop:
            for b in range(ncur):
                _account(nxt[b, 0], nxt[b, 1], cr, cm, ax, ay, ex, ey, ca, sa, full, asc,
                         rout, lo_bin, hi_bin, False)
            if last and (tol > 0.0 or atol > 0.0):
                slo = 0.0
                shi = 0.0
                for i in range(n1 - 1, -1, -1):
                    slo += lo_bin[i]
                    shi += hi_bin[i]
                    if shi - slo > tol * shi and shi - slo > atol:
                        flag = True
            break
        for b in range(ncur):
            cur[b, 0] = nxt[b, 0]
            cur[b, 1] = nxt[b, 1]
    return flag, level


@njit(cache=True, nogil=True)
def jm_profile_batch(rad, mass, nchild, spacing, ux, uy, L, ax, ay, thetas, alpha, full,
                     radii_desc, tol, atol, limit):
    n1 = radii_desc.shape[0]
    asc = radii_desc[::-1].copy()
    nt = thetas.shape[0]
    lo = np.empty((nt, n1))
    hi = np.empty((nt, n1))
    flags = np.zeros(nt, np.bool_)
    levels = np.zeros(nt, np.int64)
    lo_bin = np.empty(n1)
    hi_bin = np.empty(n1)
    cur = np.empty((limit, 2))
    nxt = np.empty((limit, 2))
    for t in range(nt):
        f, lv = _jm_profile_one(rad, mass, nchild, spacing, ux, uy, L, ax, ay, thetas[t],
                                alpha, full, asc, tol, atol, limit, lo_bin, hi_bin, cur, nxt)
        flags[t] = f
        levels[t] = lv
        # bins are indexed by shell from the outside in; accumulate inwards-out
        a = 0.0
        b = 0.0
        for i in range(n1 - 1, -1, -1):
            a += lo_bin[i]
            b += hi_bin[i]
            lo[t, i] = a
            hi[t, i] = max(a, b)
    return lo, hi, flags, levels
