"""The four-layer union of Lipschitz graphs and its bad set.

Every slot ``J`` of the base graph carries a similarity ``G_J`` (rotation by
pi/4, dilation by ``r_1``, translation to the slot centre) that maps the
reference segment ``[-1, 1] x {0}`` onto the slot's straight piece of the
graph.  The union of the four layers is the fixed depth-3 unfolding

    F_0 = Gamma,   F_d = Gamma  U  union_J G_J(F_{d-1}),

so the set is never stored.  A point carries its provenance: the slots it
descended through and a parameter ``u`` on the base graph in the innermost
local frame.  Local coordinates stay well conditioned at every depth, while
global ones lose all relative precision below ``r_1 ~ 2^{-30}``.
"""

from __future__ import annotations

import csv
import math
import threading
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from numba import njit

from .geometry import (
    HALF_SQRT2,
    Polyline,
    Segment,
    Similarity,
    classify_disc,
    clip_length_buf,
)
from .graph import BudgetError, GraphFamily

LAYERS = 3
DEFAULT_SEGMENT_BUDGET = 5_000_000


@dataclass(frozen=True, eq=False)
class EnParams:
    graph: GraphFamily

    @property
    def M(self) -> int:
        return self.graph.M

    @property
    def N(self) -> int:
        return self.graph.N

    def log2_r(self, k: int) -> float:
        return -k * self.N * (self.M + 1) - k / 2.0

    def radius(self, k: int) -> float:
        """``r_k = 2^{-kN(M+1) - k/2}``."""
        e = k * self.N * (self.M + 1) + k // 2
        return math.ldexp(HALF_SQRT2 if k % 2 else 1.0, -e)

    @property
    def r(self) -> np.ndarray:
        return np.array([self.radius(k) for k in range(LAYERS + 2)])

    @property
    def r1(self) -> float:
        return self.radius(1)

    @property
    def slot_half_width(self) -> float:
        """Half length in ``t`` of a slot, ``2^{-(M+1)N-1}``."""
        return math.ldexp(1.0, -self.graph.slot_level - 1)


@dataclass(frozen=True, order=True)
class PieceId:
    layer: int
    path: tuple

    def __post_init__(self):
        object.__setattr__(self, "path", tuple(int(i) for i in self.path))
        if len(self.path) != self.layer:
            raise ValueError("path length must equal the layer")


@dataclass(eq=False)
class CatalogEntry:
    """A piece ``Gamma_{k,I}`` with its similarity and replaced segment."""

    id: PieceId
    map: Similarity
    segment: Segment
    _base: Polyline = field(repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    _poly: Optional[Polyline] = field(default=None, repr=False)

    def graph_polyline(self) -> Polyline:
        """``map(Gamma_0)``, built once on first request."""
        if self._poly is None:
            with self._lock:
                if self._poly is None:
                    self._poly = self.map(self._base)
        return self._poly


@dataclass(frozen=True)
class EnPoint:
    """Point ``G_{path[0]} o ... o G_{path[-1]} (u, g(u))``."""

    path: tuple
    u: float

    def __post_init__(self):
        object.__setattr__(self, "path", tuple(int(i) for i in self.path))
        if not -1.0 <= self.u <= 1.0:
            raise ValueError(f"local parameter {self.u} outside [-1, 1]")

    @property
    def depth(self) -> int:
        return len(self.path)


def _rotate(p, turns=1):
    x, y = p
    for _ in range(turns % 8):
        x, y = HALF_SQRT2 * (x - y), HALF_SQRT2 * (x + y)
    return x, y


def _heap_tree(cx, cy, rad, mass):
    """Bounding-disc tree in heap layout over leaf discs."""
    n = len(cx)
    P = 1
    while P < max(n, 1):
        P *= 2
    size = 2 * P - 1
    lo_x = np.full(size, np.inf)
    hi_x = np.full(size, -np.inf)
    lo_y = np.full(size, np.inf)
    hi_y = np.full(size, -np.inf)
    m = np.zeros(size)
    leaf = np.arange(n) + P - 1
    lo_x[leaf] = cx - rad
    hi_x[leaf] = cx + rad
    lo_y[leaf] = cy - rad
    hi_y[leaf] = cy + rad
    m[leaf] = mass
    for i in range(P - 2, -1, -1):
        a, b = 2 * i + 1, 2 * i + 2
        lo_x[i] = min(lo_x[a], lo_x[b])
        hi_x[i] = max(hi_x[a], hi_x[b])
        lo_y[i] = min(lo_y[a], lo_y[b])
        hi_y[i] = max(hi_y[a], hi_y[b])
        m[i] = m[a] + m[b]
    ncx = 0.5 * (lo_x + hi_x)
    ncy = 0.5 * (lo_y + hi_y)
    nr = 0.5 * np.hypot(hi_x - lo_x, hi_y - lo_y)
    ncx[leaf] = cx
    ncy[leaf] = cy
    nr[leaf] = rad
    empty = m == 0.0
    ncx[empty] = 0.0
    ncy[empty] = 0.0
    nr[empty] = 0.0
    return ncx, ncy, nr * (1.0 + 1e-12), m, P


@dataclass(frozen=True, eq=False)
class EnKernelData:
    """Flat arrays consumed by the traversal kernel."""

    seg: np.ndarray  # (n, 4) x0 y0 x1 y1
    base_tree: tuple  # cx, cy, rad, mass, P
    slot_tree: tuple  # cx, cy, rad, count, P
    slot_centers: np.ndarray
    union_len: np.ndarray  # length of F_d, d = 0..LAYERS


class EnSet:
    """Lazy four-layer union with catalog, samplers and provenance maps."""

    def __init__(self, params: EnParams, budget: int = DEFAULT_SEGMENT_BUDGET):
        self.params = params
        self.graph = params.graph
        self.budget = budget
        self._catalog = {}
        self._catalog_lock = threading.Lock()
        verts = self.graph.g_breakpoints
        self.base = Polyline.from_vertices(verts)
        self.base_length = self.graph.arclength
        self.slot_centers = np.ascontiguousarray(self.graph.slot_centers)
        self.slot_mids = np.ascontiguousarray(self.graph.slot_midpoints)
        self.n_slots = self.graph.n_slots

    # sizes -------------------------------------------------------------------
    @property
    def r(self) -> np.ndarray:
        return self.params.r

    @property
    def r1(self) -> float:
        return self.params.r1

    @cached_property
    def union_lengths(self) -> np.ndarray:
        """Length of ``F_d`` for ``d = 0..3``; ``F_3`` is the whole set."""
        out = [self.base_length]
        for _ in range(LAYERS):
            out.append(self.base_length + self.n_slots * self.r1 * out[-1])
        return np.array(out)

    @property
    def total_length(self) -> float:
        return float(self.union_lengths[-1])

    def layer_length(self, k: int) -> float:
        """Arclength of the layer curve ``Gamma_k`` by its recursion."""
        cut = self.base_length - self.n_slots * 2.0 * self.r1
        val = self.base_length
        for _ in range(k):
            val = cut + self.n_slots * self.r1 * val
        return val

    def layer_segment_count(self, k: int) -> int:
        cells = 2 * self.graph.scale
        covered = len(np.unique(self.graph.slots_signed >> self.graph.N))
        count = cells
        for _ in range(k):
            count = (cells - covered) + self.n_slots * count
        return count

    @property
    def bad_length(self) -> float:
        """Exact length of the bad set: ``#I^4`` segments of length ``2 r_4``."""
        return float(self.n_slots) ** 4 * 2.0 * self.params.radius(4)

    def catalog_size(self, k: int) -> int:
        return self.n_slots**k

    # kernel data ---------------------------------------------------------------
    @cached_property
    def kernel_data(self) -> EnKernelData:
        s = self.base.starts
        e = self.base.ends
        seg = np.ascontiguousarray(np.hstack([s, e]))
        mid = 0.5 * (s + e)
        lens = self.base.lengths
        base_tree = _heap_tree(mid[:, 0], mid[:, 1], 0.5 * lens, lens)
        c = self.slot_centers
        slot_tree = _heap_tree(
            c[:, 0], c[:, 1], np.full(self.n_slots, self.r1), np.ones(self.n_slots)
        )
        return EnKernelData(seg, base_tree, slot_tree, c, self.union_lengths)

    # provenance ----------------------------------------------------------------
    def frame_apices(self, p: EnPoint) -> np.ndarray:
        """Coordinates of ``p`` in every frame along its path, innermost first computed."""
        d = p.depth
        out = np.empty((d + 1, 2))
        a = (p.u, self.graph.g(p.u))
        out[d] = a
        for k in range(d - 1, -1, -1):
            j = p.path[k]
            x, y = _rotate(a)
            a = (self.slot_centers[j, 0] + self.r1 * x, self.slot_centers[j, 1] + self.r1 * y)
            out[k] = a
        return out

    def position(self, p: EnPoint) -> np.ndarray:
        return self.frame_apices(p)[0]

    def piece_map(self, path) -> Similarity:
        s = Similarity()
        for j in path:
            s = s @ Similarity(1, self.r1, tuple(self.slot_centers[j]))
        return s

    def catalog_entry(self, pid: PieceId) -> CatalogEntry:
        with self._catalog_lock:
            entry = self._catalog.get(pid)
            if entry is None:
                for j in pid.path:
                    if not 0 <= j < self.n_slots:
                        raise IndexError(f"slot index {j} out of range")
                g = self.piece_map(pid.path)
                seg = g(Segment((-1.0, 0.0), (1.0, 0.0)))
                entry = CatalogEntry(pid, g, seg, self.base)
                self._catalog[pid] = entry
            return entry

    def iter_catalog(self, k: int):
        for flat in range(self.catalog_size(k)):
            path = []
            for _ in range(k):
                flat, j = divmod(flat, self.n_slots)
                path.append(j)
            yield self.catalog_entry(PieceId(k, tuple(reversed(path))))

    def replaced_segment(self, path) -> Segment:
        """``S_{k,I}`` for ``I = path``: the straight piece replaced at layer ``k``."""
        *head, last = path
        h = self.params.slot_half_width
        m = self.slot_mids[last]
        a = (m - h, self.graph.g(m - h))
        b = (m + h, self.graph.g(m + h))
        g = self.piece_map(head)
        return Segment(g.apply_point(a), g.apply_point(b))

    def endpoint_separation(self) -> float:
        """Min distance, in units of ``r_{k-1}``, between ends of ``S_{k,I}`` and of ``Gamma_{k-1,I'}``."""
        h = self.params.slot_half_width
        t = np.concatenate([self.slot_mids - h, self.slot_mids + h])
        pts = np.column_stack([t, self.graph.g(t)])
        ends = np.array([[-1.0, 0.0], [1.0, 0.0]])
        d = np.hypot(pts[:, None, 0] - ends[None, :, 0], pts[:, None, 1] - ends[None, :, 1])
        return float(d.min())

    # replacement maps ------------------------------------------------------------
    def locate_slot(self, u: float) -> int:
        """Slot containing local parameter ``u``, or -1 (boundary counts as outside)."""
        j = self.graph.slot_of(u)
        if j < 0:
            return -1
        h = self.params.slot_half_width
        return j if abs(u - self.slot_mids[j]) < h else -1

    def descend(self, j: int, u: float) -> float:
        return (u - self.slot_mids[j]) / self.params.slot_half_width

    def gamma_map(self, k: int, p: EnPoint) -> EnPoint:
        """The replacement ``Gamma_{k-1} -> Gamma_k`` applied to a provenance point."""
        if not 1 <= k <= LAYERS:
            raise ValueError(f"replacement index {k} outside 1..{LAYERS}")
        if p.depth > k - 1:
            raise ValueError(f"point at depth {p.depth} does not lie on layer {k - 1}")
        if p.depth < k - 1:
            return p
        j = self.locate_slot(p.u)
        if j < 0:
            return p
        return EnPoint(p.path + (j,), self.descend(j, p.u))

    def gamma_map_displacement(self, k: int, p: EnPoint) -> float:
        q = self.gamma_map(k, p)
        if q is p:
            return 0.0
        return self.params.radius(k) * abs(self.graph.g(q.u))

    def gamma(self, k: int, path_u) -> EnPoint:
        """``gamma_k`` on a parameter given as nested slot descent ``(path, u)``.

        The parameter of ``S_0`` is ``m_{J1} + h (m_{J2} + h (... + h u))``.
        ``path`` lists the slots the parameter lies in; it is truncated or
        completed so it has the right depth for layer ``k``.
        """
        path, u = path_u
        path = list(path)
        while len(path) < k:
            j = self.locate_slot(u)
            if j < 0:
                break
            path.append(j)
            u = self.descend(j, u)
        if len(path) > k:
            # re-ascend: the image stays on the straight slot segment
            for j in reversed(path[k:]):
                u = self.slot_mids[j] + self.params.slot_half_width * u
            path = path[:k]
        return EnPoint(tuple(path), u)

    def gamma_displacement_vector(self, u: float, m: int) -> np.ndarray:
        """``gamma_m(u) - G(u)`` in the frame of ``u``."""
        j = self.locate_slot(u) if m > 0 else -1
        if j < 0:
            return np.zeros(2)
        v = self.descend(j, u)
        inner = self.gamma_displacement_vector(v, m - 1)
        return self.r1 * np.array(_rotate((inner[0], inner[1] + self.graph.g(v))))

    def frame_parameters(self, path, u: float) -> np.ndarray:
        """Local parameters ``u_d`` of a nested parameter in every frame."""
        us = np.empty(len(path) + 1)
        us[-1] = u
        h = self.params.slot_half_width
        for d in range(len(path) - 1, -1, -1):
            us[d] = self.slot_mids[path[d]] + h * us[d + 1]
        return us

    def gamma_inverse_displacement(self, layer: int, target: int, path, u: float) -> float:
        """``|gamma_target(s) - gamma_layer(s)|`` for the nested parameter ``s = (path, u)``."""
        k = min(layer, target)
        stop = min(len(path), max(layer, target))
        if stop <= k:
            return 0.0
        us = self.frame_parameters(path, u)
        vx = vy = 0.0
        for level in range(stop - 1, k - 1, -1):
            vx, vy = _rotate((vx, vy + self.graph.g(us[level + 1])))
            vx *= self.r1
            vy *= self.r1
        return self.params.radius(k) * math.hypot(vx, vy)

    # sampling ---------------------------------------------------------------------
    @cached_property
    def _base_cdf(self) -> np.ndarray:
        c = np.cumsum(self.base.lengths)
        return c / c[-1]

    def _sample_on_base(self, rng: np.random.Generator) -> float:
        k = int(np.searchsorted(self._base_cdf, rng.random(), side="right"))
        k = min(k, len(self._base_cdf) - 1)
        t0 = -1.0 + k / self.graph.scale
        return t0 + rng.random() / self.graph.scale

    def sample_point(self, rng: np.random.Generator) -> EnPoint:
        """Arclength-uniform point of the union with provenance."""
        path = []
        d = LAYERS
        lens = self.union_lengths
        while d > 0 and rng.random() >= lens[0] / lens[d]:
            path.append(int(rng.integers(self.n_slots)))
            d -= 1
        return EnPoint(tuple(path), self._sample_on_base(rng))

    def bad_set_sample(self, count: int, seed: int) -> list:
        """Arclength-uniform points of the bad set, with their ``S_{4,I}`` ids."""
        if count < 0:
            raise ValueError("count must be non-negative")
        rng = np.random.default_rng(seed)
        h = self.params.slot_half_width
        out = []
        for _ in range(count):
            path = tuple(int(j) for j in rng.integers(self.n_slots, size=LAYERS + 1))
            u = self.slot_mids[path[-1]] + h * (2.0 * rng.random() - 1.0)
            out.append((EnPoint(path[:LAYERS], u), PieceId(LAYERS + 1, path)))
        return out

    def on_bad_set(self, p: EnPoint) -> bool:
        return p.depth == LAYERS and self.locate_slot(p.u) >= 0

    # mass queries --------------------------------------------------------------------
    def _apex_path(self, p):
        if isinstance(p, EnPoint):
            return np.ascontiguousarray(self.frame_apices(p)), np.array(p.path, dtype=np.int64)
        return np.asarray(p, dtype=float).reshape(1, 2).copy(), np.zeros(0, dtype=np.int64)

    def _query(self, p, thetas, alpha, full, rmins, rmaxs, depth=LAYERS, frame=0, frame_apex=None):
        kd = self.kernel_data
        apices, path = self._apex_path(p)
        thetas = np.ascontiguousarray(np.broadcast_to(np.asarray(thetas, float), np.shape(rmaxs)))
        return en_mass_batch(
            kd.seg, *kd.base_tree, *kd.slot_tree, kd.slot_centers, kd.union_len,
            self.r1, depth, apices, path,
            thetas.ravel(), float(alpha), bool(full),
            np.ascontiguousarray(np.broadcast_to(rmins, np.shape(rmaxs)), dtype=float).ravel(),
            np.ascontiguousarray(rmaxs, dtype=float).ravel(),
        ).reshape(np.shape(rmaxs))

    def cone_mass(self, p, theta, alpha, r_max, r_min=0.0):
        """``H^1`` of the union inside the (truncated) cone at ``p``."""
        rm = np.asarray(r_max, dtype=float)
        out = self._query(p, theta, alpha, False, r_min, np.atleast_1d(rm))
        return float(out[0]) if rm.ndim == 0 else out

    def ball_mass(self, p, r, r_min=0.0):
        rm = np.asarray(r, dtype=float)
        out = self._query(p, 0.0, 0.1, True, r_min, np.atleast_1d(rm))
        return float(out[0]) if rm.ndim == 0 else out

    def cone_mass_grid(self, p, thetas, alpha, radii, full=False, depth=LAYERS) -> np.ndarray:
        """Masses for every ``(theta, r)`` pair, shape ``(len(thetas), len(radii))``.

        ``radii`` must be strictly decreasing; a single traversal per
        direction serves all of them.
        """
        radii = np.ascontiguousarray(radii, dtype=float)
        if np.any(np.diff(radii) >= 0) or radii[-1] <= 0:
            raise ValueError("radii must be positive and strictly decreasing")
        kd = self.kernel_data
        apices, path = self._apex_path(p)
        return en_profile_batch(
            kd.seg, *kd.base_tree, *kd.slot_tree, kd.slot_centers, kd.union_len,
            self.r1, depth, apices, path,
            np.ascontiguousarray(np.atleast_1d(thetas), dtype=float), float(alpha), bool(full), radii,
        )

    def ball_mass_profile(self, p, radii, depth=LAYERS) -> np.ndarray:
        return self.cone_mass_grid(p, [0.0], 0.1, radii, full=True, depth=depth)[0]

    def piece_ball_mass(self, p: EnPoint, layer: int, r: float) -> float:
        """``H^1(Gamma_{layer, path[:layer]} cap B(p, r))`` using the local frame."""
        if layer > p.depth:
            raise ValueError("piece layer deeper than the point's provenance")
        apex = self.frame_apices(p)[layer]
        scale = self.params.radius(layer)
        kd = self.kernel_data
        local = en_mass_batch(
            kd.seg, *kd.base_tree, *kd.slot_tree, kd.slot_centers, kd.union_len,
            self.r1, 0, np.ascontiguousarray(apex.reshape(1, 2)), np.zeros(0, np.int64),
            np.zeros(1), 0.1, True, np.zeros(1), np.array([r / scale]),
        )[0]
        return float(local * scale)

    # witnesses --------------------------------------------------------------------------
    def bplg_witness(self, p: EnPoint, r: float):
        """Catalog piece used as Lipschitz-graph witness at ``(p, r)`` and its mass ratio."""
        if not isinstance(p, EnPoint):
            raise TypeError("witness selection needs a provenance point")
        if r <= 0:
            raise ValueError("radius must be positive")
        j = p.depth
        if r >= 1.0:
            layer = 0
        elif r < self.params.radius(j):
            layer = j
        else:
            layer = next(k for k in range(j) if self.params.radius(k + 1) <= r < self.params.radius(k))
        entry = self.catalog_entry(PieceId(layer, p.path[:layer]))
        return entry, self.piece_ball_mass(p, layer, r) / r

    # measured constants ----------------------------------------------------------------
    def bilipschitz_ratios(self, count: int, seed: int, k: int = LAYERS) -> np.ndarray:
        """``|gamma_k(x) - gamma_k(y)| / |x - y|`` for sampled pairs on the base curve.

        A pair shares a random slot prefix of depth ``d`` and is compared in
        that frame.  For ``d >= 1`` the base curve is straight there, so
        ``|x - y| = sqrt(2) h^d |du|`` while images scale by ``r_1^d``.
        """
        rng = np.random.default_rng(seed)
        h = self.params.slot_half_width
        out = np.empty(count)
        for n in range(count):
            d = int(rng.integers(0, k + 1))
            prefix = tuple(int(j) for j in rng.integers(self.n_slots, size=d))
            u = rng.uniform(-1.0, 1.0)
            du = math.copysign(10.0 ** -rng.uniform(0.0, 5.0), rng.uniform(-1, 1))
            v = u + du if -1.0 <= u + du <= 1.0 else u - du
            a = self.gamma(k, (prefix, u))
            b = self.gamma(k, (prefix, v))
            pa = self.position(EnPoint(a.path[d:], a.u))
            pb = self.position(EnPoint(b.path[d:], b.u))
            img = math.hypot(*(pa - pb))
            if d == 0:
                src = math.hypot(u - v, self.graph.g(u) - self.graph.g(v))
                out[n] = img / src
            else:
                out[n] = img * (self.r1 / h) ** d / (math.sqrt(2.0) * abs(u - v))
        return out

    def resolvable_radius(self, p: EnPoint) -> float:
        """Smallest radius that double precision resolves around ``p``."""
        return 1e-10 * self.params.radius(p.depth)

    def default_r_min(self) -> float:
        """A quarter of the finest constructed scale ``r_4``."""
        return self.params.radius(LAYERS + 1) / 4.0

    def adr_ratios(self, count: int, seed: int, r_max: float = 1.0, r_min: Optional[float] = None,
                   grid_ratio: float = 2.0 ** 0.25) -> np.ndarray:
        """``H^1(E cap B(x, r)) / r`` on a geometric radius grid, one row per sampled ``x``.

        Radii below ``1e-10`` times the scale of the point's own frame are
        beneath double-precision resolution there and are left as NaN.
        """
        rng = np.random.default_rng(seed)
        r_min = self.default_r_min() if r_min is None else r_min
        n = int(math.floor(math.log(r_max / r_min) / math.log(grid_ratio)))
        radii = r_max * grid_ratio ** -np.arange(n + 1, dtype=float)
        out = np.full((count, len(radii)), np.nan)
        for i in range(count):
            p = self.sample_point(rng)
            keep = radii >= self.resolvable_radius(p)
            out[i, keep] = self.ball_mass_profile(p, radii[keep]) / radii[keep]
        return out

    def bplg_ratios(self, count: int, seed: int, r_max: float = 2.0,
                    r_min: Optional[float] = None) -> np.ndarray:
        """Witness ratios at sampled ``(x, r)``, ``r`` log-uniform in ``[r_min, r_max]``.

        The lower end is raised to :meth:`resolvable_radius` of each point.
        """
        rng = np.random.default_rng(seed)
        r_min = self.default_r_min() if r_min is None else r_min
        out = np.empty(count)
        for i in range(count):
            p = self.sample_point(rng)
            lo = max(r_min, self.resolvable_radius(p))
            r = math.exp(rng.uniform(math.log(lo), math.log(r_max)))
            out[i] = self.bplg_witness(p, r)[1]
        return out

    # materialisation ------------------------------------------------------------------
    def _check_budget(self, count: int, what: str):
        if count > self.budget:
            raise BudgetError(f"{what} needs {count} segments, budget is {self.budget}")

    def _layer_arrays(self, k: int, full_base_on_top: bool):
        s = self.base.starts
        e = self.base.ends
        if k == 0:
            return s, e, [()] * len(s)
        cells = np.floor((0.5 * (s[:, 0] + e[:, 0]) + 1.0) * self.graph.scale).astype(np.int64) - self.graph.scale
        covered = np.isin(cells, np.unique(self.graph.slots_signed >> self.graph.N))
        keep = np.ones(len(s), bool) if full_base_on_top else ~covered
        inner_s, inner_e, inner_ids = self._layer_arrays(k - 1, full_base_on_top)
        parts_s = [s[keep]]
        parts_e = [e[keep]]
        ids = [()] * int(keep.sum())
        for j in range(self.n_slots):
            g = Similarity(1, self.r1, tuple(self.slot_centers[j]))
            parts_s.append(g.apply_points(inner_s))
            parts_e.append(g.apply_points(inner_e))
            ids.extend((j,) + t for t in inner_ids)
        return np.vstack(parts_s), np.vstack(parts_e), ids

    def materialize_layer(self, k: int):
        """``Gamma_k`` as a segment list plus per-segment piece paths."""
        if not 0 <= k <= LAYERS:
            raise ValueError(f"layer {k} outside 0..{LAYERS}")
        self._check_budget(self.layer_segment_count(k), f"layer {k}")
        s, e, ids = self._layer_arrays(k, False)
        return Polyline(s, e, connected=False), ids

    def materialize_union(self, depth: int = LAYERS):
        """``F_depth`` (the whole set when depth = 3) as a segment list."""
        count = len(self.base) * sum(self.n_slots**i for i in range(depth + 1))
        self._check_budget(count, f"union of depth {depth}")
        s, e, ids = self._layer_arrays(depth, True)
        return Polyline(s, e, connected=False), ids

    def export_csv(self, path, k: int) -> None:
        poly, ids = self.materialize_layer(k)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x0", "y0", "x1", "y1", "piece"])
            for (a, b), pid in zip(zip(poly.starts, poly.ends), ids):
                w.writerow([repr(a[0]), repr(a[1]), repr(b[0]), repr(b[1]), "/".join(map(str, pid))])


def build_en(params: EnParams, budget: int = DEFAULT_SEGMENT_BUDGET) -> EnSet:
    return EnSet(params, budget)


# ------------------------------------------------------------------------------------
# traversal kernel

_STACK = 8192


@njit(cache=True, nogil=True)
def _en_mass_one(
    seg, bcx, bcy, brad, bmass, bP, scx, scy, srad, scount, sP, slot_c, union_len,
    r1, depth, apices, path, theta, alpha, full, rmin, rmax,
):
    ex = np.empty(depth + 1)
    ey = np.empty(depth + 1)
    lo = np.empty(depth + 1)
    hi = np.empty(depth + 1)
    sc = np.empty(depth + 1)
    ca = math.cos(alpha)
    sa = math.sin(alpha)
    brk = np.empty(8)
    s = 1.0
    for d in range(depth + 1):
        ang = theta - d * (math.pi / 4.0)
        ex[d] = math.cos(ang)
        ey[d] = math.sin(ang)
        lo[d] = rmin / s
        hi[d] = rmax / s
        sc[d] = s
        s *= r1
    kind = np.empty(_STACK, np.int64)
    node = np.empty(_STACK, np.int64)
    dep = np.empty(_STACK, np.int64)
    onp = np.empty(_STACK, np.bool_)
    axs = np.empty(_STACK)
    ays = np.empty(_STACK)
    top = 0
    kind[0] = 0
    node[0] = 0
    dep[0] = 0
    onp[0] = True
    axs[0] = apices[0, 0]
    ays[0] = apices[0, 1]
    top = 1
    if depth > 0:
        kind[1] = 1
        node[1] = 0
        dep[1] = 0
        onp[1] = True
        axs[1] = apices[0, 0]
        ays[1] = apices[0, 1]
        top = 2
    total = 0.0
    npath = path.shape[0]
    while top > 0:
        top -= 1
        k = kind[top]
        i = node[top]
        d = dep[top]
        ax = axs[top]
        ay = ays[top]
        op = onp[top]
        if k == 0:
            if bmass[i] == 0.0:
                continue
            st = classify_disc(bcx[i], bcy[i], brad[i], ax, ay, ex[d], ey[d], ca, sa, full, lo[d], hi[d])
            if st == 0:
                continue
            if st == 1:
                total += bmass[i] * sc[d]
                continue
            if i >= bP - 1:
                j = i - (bP - 1)
                total += sc[d] * clip_length_buf(
                    seg[j, 0], seg[j, 1], seg[j, 2], seg[j, 3], ax, ay, ex[d], ey[d],
                    alpha, full, lo[d], hi[d], brk,
                )
                continue
        else:
            if scount[i] == 0.0:
                continue
            st = classify_disc(scx[i], scy[i], srad[i], ax, ay, ex[d], ey[d], ca, sa, full, lo[d], hi[d])
            if st == 0:
                continue
            if st == 1:
                total += scount[i] * r1 * union_len[depth - d - 1] * sc[d]
                continue
            if i >= sP - 1:
                j = i - (sP - 1)
                if op and d < npath and path[d] == j:
                    nx = apices[d + 1, 0]
                    ny = apices[d + 1, 1]
                    nop = True
                else:
                    vx = (ax - slot_c[j, 0]) / r1
                    vy = (ay - slot_c[j, 1]) / r1
                    # inverse rotation by pi/4
                    nx = 0.7071067811865476 * (vx + vy)
                    ny = 0.7071067811865476 * (vy - vx)
                    nop = False
                if top + 2 > _STACK:
                    raise RuntimeError("traversal stack overflow")
                kind[top] = 0
                node[top] = 0
                dep[top] = d + 1
                onp[top] = nop
                axs[top] = nx
                ays[top] = ny
                top += 1
                if d + 1 < depth:
                    kind[top] = 1
                    node[top] = 0
                    dep[top] = d + 1
                    onp[top] = nop
                    axs[top] = nx
                    ays[top] = ny
                    top += 1
                continue
        if top + 2 > _STACK:
            raise RuntimeError("traversal stack overflow")
        for c in (2 * i + 1, 2 * i + 2):
            kind[top] = k
            node[top] = c
            dep[top] = d
            onp[top] = op
            axs[top] = ax
            ays[top] = ay
            top += 1
    return total


@njit(cache=True, nogil=True)
def en_mass_batch(
    seg, bcx, bcy, brad, bmass, bP, scx, scy, srad, scount, sP, slot_c, union_len,
    r1, depth, apices, path, thetas, alpha, full, rmins, rmaxs,
):
    """Union mass for a batch of cones (or annuli when ``full``) sharing one apex."""
    out = np.empty(rmaxs.shape[0])
    for q in range(rmaxs.shape[0]):
        out[q] = _en_mass_one(
            seg, bcx, bcy, brad, bmass, bP, scx, scy, srad, scount, sP, slot_c, union_len,
            r1, depth, apices, path, thetas[q], alpha, full, rmins[q], rmaxs[q],
        )
    return out


@njit(cache=True, nogil=True)
def _shell(asc, x):
    # shell index i with R_i >= x > R_{i+1} for descending R = asc[::-1];
    # -1 beyond the outer radius, n for x <= R_n
    n1 = asc.shape[0]
    return n1 - 1 - np.searchsorted(asc, x)


@njit(cache=True, nogil=True)
def _en_profile_one(
    seg, bcx, bcy, brad, bmass, bP, scx, scy, srad, scount, sP, slot_c, union_len,
    r1, depth, apices, path, theta, alpha, full, asc, bins,
):
    n = asc.shape[0] - 1
    for i in range(n + 1):
        bins[i] = 0.0
    rout = asc[n]
    ex = np.empty(depth + 1)
    ey = np.empty(depth + 1)
    sc = np.empty(depth + 1)
    ca = math.cos(alpha)
    sa = math.sin(alpha)
    brk = np.empty(8)
    s = 1.0
    for d in range(depth + 1):
        ang = theta - d * (math.pi / 4.0)
        ex[d] = math.cos(ang)
        ey[d] = math.sin(ang)
        sc[d] = s
        s *= r1
    kind = np.empty(_STACK, np.int64)
    node = np.empty(_STACK, np.int64)
    dep = np.empty(_STACK, np.int64)
    onp = np.empty(_STACK, np.bool_)
    axs = np.empty(_STACK)
    ays = np.empty(_STACK)
    kind[0] = 0
    node[0] = 0
    dep[0] = 0
    onp[0] = True
    axs[0] = apices[0, 0]
    ays[0] = apices[0, 1]
    top = 1
    if depth > 0:
        kind[1] = 1
        node[1] = 0
        dep[1] = 0
        onp[1] = True
        axs[1] = apices[0, 0]
        ays[1] = apices[0, 1]
        top = 2
    npath = path.shape[0]
    while top > 0:
        top -= 1
        k = kind[top]
        i = node[top]
        d = dep[top]
        ax = axs[top]
        ay = ays[top]
        op = onp[top]
        if k == 0:
            m = bmass[i]
            cx = bcx[i]
            cy = bcy[i]
            rad = brad[i]
            leaf = i >= bP - 1
        else:
            m = scount[i] * r1 * union_len[depth - d - 1]
            cx = scx[i]
            cy = scy[i]
            rad = srad[i]
            leaf = i >= sP - 1
        if m == 0.0:
            continue
        dist = math.hypot(cx - ax, cy - ay)
        lo = (dist - rad) * sc[d]
        if lo > rout:
            continue
        if full:
            ang = 1
        else:
            ang = classify_disc(cx, cy, rad, ax, ay, ex[d], ey[d], ca, sa, False, 0.0, math.inf)
            if ang == 0:
                continue
        hi = (dist + rad) * sc[d]
        s_out = _shell(asc, hi)
        s_in = _shell(asc, lo)
        if ang == 1 and s_out == s_in:
            bins[s_in] += m * sc[d]
            continue
        if leaf and k == 0:
            j = i - (bP - 1)
            first = s_out if s_out >= 0 else 0
            for b in range(first, s_in + 1):
                r_hi = asc[n - b] / sc[d]
                r_lo = asc[n - b - 1] / sc[d] if b < n else 0.0
                bins[b] += sc[d] * clip_length_buf(
                    seg[j, 0], seg[j, 1], seg[j, 2], seg[j, 3], ax, ay, ex[d], ey[d],
                    alpha, full, r_lo, r_hi, brk,
                )
            continue
        if top + 2 > _STACK:
            raise RuntimeError("traversal stack overflow")
        if leaf:
            j = i - (sP - 1)
            if op and d < npath and path[d] == j:
                nx = apices[d + 1, 0]
                ny = apices[d + 1, 1]
                nop = True
            else:
                vx = (ax - slot_c[j, 0]) / r1
                vy = (ay - slot_c[j, 1]) / r1
                nx = 0.7071067811865476 * (vx + vy)
                ny = 0.7071067811865476 * (vy - vx)
                nop = False
            kind[top] = 0
            node[top] = 0
            dep[top] = d + 1
            onp[top] = nop
            axs[top] = nx
            ays[top] = ny
            top += 1
            if d + 1 < depth:
                kind[top] = 1
                node[top] = 0
                dep[top] = d + 1
                onp[top] = nop
                axs[top] = nx
                ays[top] = ny
                top += 1
            continue
        for c in (2 * i + 1, 2 * i + 2):
            kind[top] = k
            node[top] = c
            dep[top] = d
            onp[top] = op
            axs[top] = ax
            ays[top] = ay
            top += 1


@njit(cache=True, nogil=True)
def en_profile_batch(
    seg, bcx, bcy, brad, bmass, bP, scx, scy, srad, scount, sP, slot_c, union_len,
    r1, depth, apices, path, thetas, alpha, full, radii_desc,
):
    """Cone masses ``mu(K(x, theta, alpha, r))`` for every theta and every radius.

    One traversal per direction bins the mass into the shells between
    consecutive radii; cumulative sums from the inside give the masses.
    """
    n1 = radii_desc.shape[0]
    asc = radii_desc[::-1].copy()
    out = np.empty((thetas.shape[0], n1))
    bins = np.empty(n1)
    for t in range(thetas.shape[0]):
        _en_profile_one(
            seg, bcx, bcy, brad, bmass, bP, scx, scy, srad, scount, sP, slot_c, union_len,
            r1, depth, apices, path, thetas[t], alpha, full, asc, bins,
        )
        acc = 0.0
        for i in range(n1 - 1, -1, -1):
            acc += bins[i]
            out[t, i] = acc
    return out
