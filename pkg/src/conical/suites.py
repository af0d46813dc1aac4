"""Verification suites: each runs one family of checks and returns records and tables.

A record is ``pass``/``fail`` for a hard assertion or ``measured`` for a
reported constant.  Tables feed the CSV writers and trend figures.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import jm
from .config import RunConfig
from .en import LAYERS, EnParams, EnPoint, build_en
from .energy import (
    EnergyQuadrature,
    EnMeasure,
    PolylineMeasure,
    direction_min_energy,
    energies_over_directions,
    fit_log_over_square,
    jm_ball_density_increments,
    jm_cone_ball_domination,
    jm_energy_deep,
    theta_grid,
)
from .geometry import Cone, Polyline, cone_contains, cone_contains_many
from .graph import GraphParams, ParameterWarning, build_graph

ENERGY_COLUMNS = ["set_id", "M", "N_or_Kmax", "x", "y", "theta", "alpha", "p", "R",
                  "energy", "err_bound", "flags"]


@dataclass
class CheckRecord:
    tag: str
    status: str  # pass | fail | measured
    measured: dict = field(default_factory=dict)
    runtime: float = 0.0
    detail: str = ""

    @property
    def hard(self) -> bool:
        return self.status in ("pass", "fail")


@dataclass
class Table:
    columns: list
    rows: list = field(default_factory=list)


@dataclass
class FigureSpec:
    name: str
    table: str
    x: str
    y: str
    group: str = ""
    logx: bool = False
    logy: bool = False
    title: str = ""


@dataclass
class SuiteResult:
    suite: str
    records: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)
    figures: list = field(default_factory=list)
    runtime: float = 0.0

    @property
    def ok(self) -> bool:
        return all(r.status != "fail" for r in self.records)

    def record(self, tag, ok=None, **measured):
        status = "measured" if ok is None else ("pass" if ok else "fail")
        detail = measured.pop("detail", "")
        rec = CheckRecord(tag, status, measured, detail=detail)
        self.records.append(rec)
        return rec


class _Timer:
    def __init__(self, result: SuiteResult):
        self.result = result

    def __enter__(self):
        self.t0 = time.perf_counter()
        self.n0 = len(self.result.records)
        return self

    def __exit__(self, *exc):
        dt = time.perf_counter() - self.t0
        new = self.result.records[self.n0:]
        for r in new:
            r.runtime = dt / max(len(new), 1)


@lru_cache(maxsize=16)
def en_set(M: int, N: int, budget: int = 5_000_000):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ParameterWarning)
        return build_en(EnParams(build_graph(GraphParams(M, N))), budget)


def relative_spread(values) -> float:
    """``max / min - 1`` of positive values."""
    v = np.asarray(values, dtype=float)
    return float(v.max() / v.min() - 1.0)


# ---------------------------------------------------------------------------------
# graph and set properties


def suite_p_props(cfg: RunConfig) -> SuiteResult:
    res = SuiteResult("p-props")
    for M, N in cfg.graph_pairs:
        with _Timer(res):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ParameterWarning)
                gf = build_graph(GraphParams(M, N))
            pre = f"M{M}N{N}"
            res.record(f"{pre}/endpoints-vanish", gf.check_p1(),
                       g_left=int(gf.numerators[0]), g_right=int(gf.numerators[-1]))
            res.record(f"{pre}/unit-slope-on-slots", gf.check_p2())
            res.record(f"{pre}/counting", gf.check_p3())
            res.record(f"{pre}/slot-count", gf.n_slots == 2 ** ((M + 1) * N - M),
                       count=gf.n_slots, expected=2 ** ((M + 1) * N - M))
            fam = [len(gf.family_signed(j)) for j in range(1, M + 1)]
            res.record(f"{pre}/family-counts", fam == [2 ** (j * N - j) for j in range(1, M + 1)],
                       counts=fam)
            res.record(f"{pre}/one-lipschitz", gf.is_one_lipschitz())
    return res


def suite_gamma_maps(cfg: RunConfig) -> SuiteResult:
    """Sampled sup displacements of the replacement maps and of their compositions."""
    res = SuiteResult("gamma-maps")
    en = en_set(cfg.M, cfg.N, cfg.budget)
    rng = np.random.default_rng(cfg.seed)
    M = cfg.M
    h = en.params.slot_half_width
    rows = []
    with _Timer(res):
        for k in range(1, LAYERS + 1):
            sup = 0.0
            for _ in range(cfg.displacement_samples):
                path = tuple(int(j) for j in rng.integers(en.n_slots, size=k - 1))
                if rng.random() < 0.5:
                    u = float(en.slot_mids[rng.integers(en.n_slots)] + h * rng.uniform(-1, 1))
                else:
                    u = float(rng.uniform(-1, 1))
                sup = max(sup, en.gamma_map_displacement(k, EnPoint(path, u)))
            bound = 2.0 / M * en.params.radius(k)
            res.record(f"replacement-{k}", sup <= bound, sup=sup, bound=bound)
            rows.append(["replacement", k, k - 1, sup, bound])
        for layer in range(LAYERS + 1):
            for target in range(LAYERS + 1):
                depth = max(layer, target)
                sup = 0.0
                n = cfg.displacement_samples if layer != target else 1
                for _ in range(n):
                    path = tuple(int(j) for j in rng.integers(en.n_slots, size=depth))
                    sup = max(sup, en.gamma_inverse_displacement(layer, target, path,
                                                                 float(rng.uniform(-1, 1))))
                bound = 6.0 / M * en.params.radius(min(layer, target) + 1)
                res.record(f"composition-{layer}-{target}", sup <= bound, sup=sup, bound=bound)
                rows.append(["composition", layer, target, sup, bound])
    res.tables["displacements"] = Table(["kind", "layer", "target", "sup", "bound"], rows)
    return res


def cone_lemma_trials(count: int, seed: int):
    """Points of a narrow twice-truncated cone tested against the widened cone at a nearby apex.

    Returns ``(violations, checked)``.
    """
    rng = np.random.default_rng(seed)
    violations = 0
    checked = 0
    for _ in range(count):
        a0 = rng.uniform(1e-4, math.pi / 50)
        r = math.exp(rng.uniform(math.log(1e-3), math.log(10.0)))
        theta = rng.uniform(0.0, math.pi)
        x1 = rng.uniform(-1.0, 1.0, 2)
        off = np.sin(a0) * r * rng.uniform(1e-3, 1.0)
        phi = rng.uniform(0, 2 * math.pi)
        x2 = x1 + off * np.array([math.cos(phi), math.sin(phi)])
        dist = math.hypot(*(x1 - x2))
        inner = dist / math.sin(a0)
        if not inner < r:
            continue
        src = Cone(x1, theta, a0, inner, r)
        rho = rng.uniform(inner, r)
        ang = theta + rng.uniform(-a0, a0) + (math.pi if rng.random() < 0.5 else 0.0)
        y = x1 + rho * np.array([math.cos(ang), math.sin(ang)])
        if not cone_contains(src, y):
            continue
        checked += 1
        if not cone_contains(Cone(x2, theta, 8 * a0, 0.0, 2 * r), y):
            violations += 1
    return violations, checked


def suite_cone_lemma(cfg: RunConfig) -> SuiteResult:
    res = SuiteResult("cone-lemma")
    with _Timer(res):
        bad, n = cone_lemma_trials(cfg.cone_lemma_samples, cfg.seed)
        res.record("twice-truncated-inclusion", bad == 0 and n > 0, violations=bad, checked=n)
    return res


def stability_constants(cfg: RunConfig, N: int) -> dict:
    en = en_set(cfg.M, N, cfg.budget)
    n = cfg.stability_samples
    b = en.bilipschitz_ratios(cfg.bilipschitz_pairs, cfg.seed)
    a = en.adr_ratios(n, cfg.seed + 1)
    k = en.bplg_ratios(n, cfg.seed + 2)
    return dict(
        bilipschitz_c=float(max(b.max(), 1.0 / b.min())),
        adr_C=float(max(np.nanmax(a), 1.0 / np.nanmin(a))),
        bplg_kappa=float(k.min()),
    )


def _stability(cfg: RunConfig, name: str, keys: list) -> SuiteResult:
    res = SuiteResult(name)
    rows = []
    per_N = {}
    for N in cfg.stability_N:
        with _Timer(res):
            c = stability_constants(cfg, N)
            per_N[N] = c
            for key in keys:
                res.record(f"N{N}/{key}", None, value=c[key])
            rows.append([N] + [c[k] for k in keys])
    for key in keys:
        vals = [per_N[N][key] for N in cfg.stability_N]
        ok = all(v > 0 for v in vals) and relative_spread(vals) < 0.25
        res.record(f"{key}-stable-across-N", ok, spread=relative_spread(vals), values=vals)
    res.tables["constants"] = Table(["N"] + keys, rows)
    return res


def suite_bplg(cfg: RunConfig) -> SuiteResult:
    return _stability(cfg, "bplg", ["bplg_kappa"])


def suite_adr(cfg: RunConfig) -> SuiteResult:
    return _stability(cfg, "adr", ["adr_C", "bilipschitz_c"])


# ---------------------------------------------------------------------------------
# energies


def en_bad_point_scan(cfg: RunConfig, N: int):
    """Direction scans at ``cfg.energy_points`` bad-set points of ``E_N``."""
    en = en_set(cfg.M, N, cfg.budget)
    meas = EnMeasure(en)
    r_min = en.default_r_min() if cfg.r_min is None else cfg.r_min
    quad = EnergyQuadrature(r_min, cfg.p, cfg.grid_ratio)
    out = []
    for p, _ in en.bad_set_sample(cfg.energy_points, cfg.seed + N):
        out.append((p, en.position(p), direction_min_energy(meas, p, cfg.alpha, 1.0, quad,
                                                            cfg.theta_step)))
    return out


def suite_en_energy(cfg: RunConfig) -> SuiteResult:
    res = SuiteResult("en-energy")
    rows, trend = [], []
    means = {}
    for N in cfg.N_values:
        with _Timer(res):
            scans = en_bad_point_scan(cfg, N)
            if not scans:
                continue
            mins = np.array([s.min for _, _, s in scans])
            unif = np.array([s.max / s.min for _, _, s in scans])
            means[N] = float(mins.mean())
            res.record(f"N{N}/min-energy", None, mean=means[N], lowest=float(mins.min()),
                       uniformity=float(unif.max()))
            res.record(f"N{N}/direction-uniformity", bool(unif.max() <= 3.0),
                       worst_ratio=float(unif.max()))
            trend.append([N, means[N], float(mins.min()), float(unif.max())])
            for i, (p, pos, s) in enumerate(scans):
                for th, e, err in zip(s.thetas, s.energies, s.errors):
                    rows.append([f"en:{i}", cfg.M, N, pos[0], pos[1], th, cfg.alpha, cfg.p, 1.0,
                                 e, err, 0])
    Ns = sorted(means)
    if len(Ns) >= 2:
        inc = all(means[a] < means[b] for a, b in zip(Ns, Ns[1:]))
        res.record("energy-increases-with-N", inc, means=[means[n] for n in Ns])
        ratio = means[Ns[-1]] / means[Ns[0]]
        res.record("energy-ratio-last-first", ratio >= 2.0, ratio=ratio)
        slope = float(np.polyfit(Ns, [means[n] for n in Ns], 1)[0])
        res.record("energy-slope", None, slope=slope,
                   per_N=[means[n] / n for n in Ns])
    res.tables["energy"] = Table(ENERGY_COLUMNS, rows)
    res.tables["energy_trend"] = Table(["N", "mean_min_energy", "lowest_min_energy",
                                        "worst_uniformity"], trend)
    res.figures.append(FigureSpec("energy_trend", "energy_trend", "N", "mean_min_energy",
                                  title="direction-minimised energy at bad points"))
    return res


def jm_params(cfg: RunConfig) -> jm.JmParams:
    return jm.JmParams(cfg.M, jm.BetaRule(cfg.beta_c), cfg.depth_cap)


def suite_jm_structure(cfg: RunConfig) -> SuiteResult:
    res = SuiteResult("jm-structure")
    P = jm_params(cfg)
    with _Timer(res):
        mass = max(jm.mass_conservation_defect(P, k) for k in range(cfg.audit_depth + 1))
        res.record("mass-conservation", mass <= 1e-12, max_log_defect=mass)
        tang = max(jm.tangency_defect(P, k) for k in range(cfg.audit_depth + 1))
        res.record("extreme-child-tangency", tang <= 1e-12, max_relative_gap=tang)
        # explicit children agree with the closed forms
        node = jm.root(P)
        for _ in range(3):
            kids = jm.children(P, node)
            far = math.hypot(kids[-1].center[0] - node.center[0], kids[-1].center[1] - node.center[1])
            gap = abs((far + kids[-1].radius) / node.radius - 1.0)
            res.record(f"gen{node.generation + 1}/explicit-tangency", gap <= 1e-12, gap=gap)
            node = kids[len(kids) // 2]
        overlaps = jm.disjointness_audit(P, cfg.audit_depth)
        res.record("cross-parent-overlaps", None, depth=cfg.audit_depth, count=int(len(overlaps)))
        ok = all(jm.mass_ratio_lower_bound_holds(P, k) for k in range(1, 65))
        res.record("mass-ratio-lower-bound", ok, checked_up_to=64)
    with _Timer(res):
        n0 = jm.n0_for(cfg.alpha, cfg.M, P.beta)
        rows = []
        for th in cfg.jm_thetas:
            counts = [jm.good_index_count(N, th, cfg.alpha, cfg.M) for N in range(n0, n0 + 4)]
            brute = [jm.good_index_count_bruteforce(N, th, cfg.alpha) for N in range(n0, n0 + 4)]
            Cs = [c / (2 ** N * cfg.alpha) for c, N in zip(counts, range(n0, n0 + 4))]
            ratios = [b / a for a, b in zip(counts, counts[1:])]
            tag = f"theta={th:.4f}"
            res.record(f"{tag}/count-matches-enumeration", counts == brute, counts=counts)
            res.record(f"{tag}/constant-stable", min(Cs) > 0 and max(Cs) / min(Cs) <= 2.0, C=Cs)
            res.record(f"{tag}/block-ratio", all(1.5 <= r <= 2.5 for r in ratios), ratios=ratios)
            rows += [[th, N, c, C] for N, c, C in zip(range(n0, n0 + 4), counts, Cs)]
        res.tables["good_indices"] = Table(["theta", "block", "count", "C"], rows)
        res.record("block-start", None, n0=n0)
    return res


def _jm_rows(cfg, P, dep: "DeepEnergy", label: str, R: float):
    x = jm.JmPoint(jm.middle_address(P, 12)).position(P)
    rows = []
    for K in cfg.K_values:
        val = dep.partial(K)
        lo, hi = dep.partial_bounds(K)
        fl = dep.flags[1:K + 1].sum(0)
        for i, th in enumerate(dep.thetas):
            rows.append([label, cfg.M, K, x[0], x[1], th, cfg.alpha, dep.pexp, R, val[i],
                         max(val[i] - lo[i], hi[i] - val[i]), int(fl[i])])
    return rows


def suite_jm_diverge(cfg: RunConfig) -> SuiteResult:
    res = SuiteResult("jm-diverge")
    P = jm_params(cfg)
    Ks = sorted(cfg.K_values)
    with _Timer(res):
        dep = jm_energy_deep(P, cfg.jm_thetas, cfg.alpha, Ks[-1], 1, tol=cfg.tol,
                             levels=cfg.jm_levels)
    R = 4.0 * jm.radius(P, 1)
    sums = np.array([dep.partial(K) for K in Ks])  # (len(Ks), thetas)
    for i, th in enumerate(dep.thetas):
        tag = f"theta={th:.4f}"
        inc = np.diff(sums[:, i])
        res.record(f"{tag}/partial-sums-increase", bool(np.all(inc > 0)), partial=sums[:, i].tolist())
        if len(inc) >= 2:
            spread = float(inc.max() / inc.min() - 1.0) if inc.min() > 0 else math.inf
            res.record(f"{tag}/increments-comparable", spread <= 0.5, increments=inc.tolist(),
                       spread=spread)
        lo, hi = zip(*(dep.partial_bounds(K) for K in Ks))
        widths = [float(h[i] - l[i]) for l, h in zip(lo, hi)]
        res.record(f"{tag}/certified-width", None, widths=widths)
        lows = np.array([l[i] for l in lo])
        res.record(f"{tag}/lower-bounds-increase", bool(np.all(np.diff(lows) > 0)),
                   lower=lows.tolist())
    res.tables["energy"] = Table(ENERGY_COLUMNS, _jm_rows(cfg, P, dep, "jm:middle", R))
    res.tables["partial_sums"] = Table(
        ["K_max", "theta", "partial"],
        [[K, th, float(sums[j, i])] for j, K in enumerate(Ks) for i, th in enumerate(dep.thetas)])
    res.figures.append(FigureSpec("jm_partial_sums", "partial_sums", "K_max", "partial", "theta",
                                  logx=True, title="block energy partial sums, exponent 1"))
    return res


def suite_jm_bounded(cfg: RunConfig) -> SuiteResult:
    res = SuiteResult("jm-bounded")
    P = jm_params(cfg)
    K = max(cfg.K_values)
    with _Timer(res):
        inc = jm_ball_density_increments(P, K, tol=cfg.tol, levels=cfg.jm_levels)
        v = inc.value[:, 0]
        k = np.arange(33, K + 1)
        dec = bool(np.all(np.diff(v[32:K + 1]) < 0))
        res.record("increments-decrease-beyond-32", dec,
                   increases=int(np.sum(np.diff(v[32:K + 1]) >= 0)))
        C, spread = fit_log_over_square(k, v[33:K + 1])
        res.record("fit-log-over-square", spread <= 4.0, C=C, spread=spread)
        partial = float(v[1:].sum())
        tail = float(np.max(v[33:K + 1] * k ** 2 / np.log(k)) * (math.log(K) + 1.0) / K)
        res.record("tail-bound", None, partial=partial, tail=tail, fraction=tail / partial)
        res.record("certified-bracket", None, lower=float(inc.lo[1:].sum()),
                   upper=float(inc.hi[1:].sum()))
        C_hi, spread_hi = fit_log_over_square(k, inc.hi[33:K + 1, 0])
        res.record("upper-bound-fit", spread_hi <= 4.0, C=C_hi, spread=spread_hi)
    with _Timer(res):
        dep2 = jm_energy_deep(P, cfg.jm_thetas, cfg.alpha, K, 2, tol=cfg.tol, levels=cfg.jm_levels)
        res.record("block-energy-exponent-2", None, partial=dep2.partial(K).tolist())
    with _Timer(res):
        bad = jm_cone_ball_domination(P, cfg.jm_thetas, cfg.alpha, K)
        res.record("cone-below-ball", bad == 0, violations=bad)
    step = max(1, K // 512)
    res.tables["increments"] = Table(
        ["k", "increment", "fit"],
        [[int(j), float(v[j]), C * math.log(j) / j ** 2] for j in range(2, K + 1, step)])
    R = 4.0 * jm.radius(P, 1)
    res.tables["energy"] = Table(ENERGY_COLUMNS, _jm_rows(cfg, P, dep2, "jm:middle", R))
    res.figures.append(FigureSpec("jm_increments", "increments", "k", "increment", logx=True,
                                  logy=True, title="ball-density increments, exponent 2"))
    return res


# ---------------------------------------------------------------------------------
# engine soundness


def mu_samples(P: jm.JmParams, count: int, depth: int, rng) -> np.ndarray:
    """Centres of ``mu``-random generation-``depth`` balls (each child equally likely)."""
    t = jm.generation_table(P, 256)
    pts = np.zeros((count, 2))
    r = 0.5
    for g in range(depth):
        m = int(t.m[g + 1])
        idx = rng.integers(m, size=count)
        off = (idx - (m - 1) / 2.0) * r * t.gap[g]
        pts += off[:, None] * np.array([math.cos(t.axis[g + 1]), math.sin(t.axis[g + 1])])
        r *= t.shrink[g]
    return pts


def oracle_bracket(centers, radius, tree, apex, theta, alpha, R, weight):
    """Mass bracket from classifying every materialised ball independently."""
    idx = tree.query_ball_point(apex, R + radius)
    if not idx:
        return 0.0, 0.0
    c = centers[idx] - apex
    d = np.hypot(c[:, 0], c[:, 1])
    u = np.array([math.cos(theta), math.sin(theta)])
    along = np.abs(c @ u)
    phi = np.arctan2(np.abs(c[:, 0] * u[1] - c[:, 1] * u[0]), along)  # angle to the axis line
    s = np.arcsin(np.clip(radius / np.maximum(d, radius), 0, 1))
    radial_in = (d - radius > 0) & (d + radius <= R)
    inside = radial_in & (phi + s < alpha)
    outside = (d - radius > R) | ((d > radius) & (phi - s >= alpha))
    n_in = int(inside.sum())
    n_mid = int((~inside & ~outside).sum())
    return n_in * weight, (n_in + n_mid) * weight


def suite_engine(cfg: RunConfig) -> SuiteResult:
    from scipy.spatial import cKDTree

    res = SuiteResult("engine")
    rng = np.random.default_rng(cfg.seed)
    P = jm_params(cfg)
    depth = cfg.engine_depth
    with _Timer(res):
        centers, _, radius = jm.generation_arrays(P, depth)
        tree = cKDTree(centers)
        weight = 1.0 / len(centers)
        shallow = jm.global_frame(P, depth)
        deep = jm.global_frame(P, depth + 3)
        samples = mu_samples(P, 20_000, 10, rng)
        mismatch = nested = outside_mc = 0
        worst = 0.0
        for _ in range(cfg.engine_cones):
            apex = rng.uniform(-0.5, 0.5, 2)
            th = rng.uniform(0, math.pi)
            al = rng.uniform(0.05, 1.5)
            R = math.exp(rng.uniform(math.log(1e-3), 0.0))
            olo, ohi = oracle_bracket(centers, radius, tree, apex, th, al, R, weight)
            lo6, hi6, _, _ = jm.frame_profile(shallow, apex, [th], al, False, np.array([R]), 0.0,
                                              levels=depth)
            lo, hi, _, _ = jm.frame_profile(deep, apex, [th], al, False, np.array([R]), cfg.tol,
                                            atol=1e-2 * cfg.tol, frontier_limit=1 << 16)
            eps = 1e-12 + 2.0 * weight  # borderline balls may classify differently
            d6 = max(abs(lo6[0, 0] - olo), abs(hi6[0, 0] - ohi))
            worst = max(worst, d6)
            mismatch += d6 > eps
            # both brackets contain the true mass, so they must overlap
            nested += not (lo[0, 0] <= ohi + eps and hi[0, 0] >= olo - eps)
            v = samples - apex
            rho = np.hypot(v[:, 0], v[:, 1])
            inside = (rho <= R) & (np.abs(-math.sin(th) * v[:, 0] + math.cos(th) * v[:, 1])
                                   < math.sin(al) * rho)
            f = inside.mean()
            sd = math.sqrt(max(f * (1 - f), 1.0 / len(samples)) / len(samples))
            outside_mc += not (lo[0, 0] - 5 * sd <= f <= hi[0, 0] + 5 * sd)
        n = cfg.engine_cones
        res.record("fixed-depth-matches-oracle", mismatch == 0, cones=n, mismatches=int(mismatch),
                   worst=worst)
        res.record("deep-interval-meets-oracle", nested == 0, cones=n, violations=int(nested))
        res.record("monte-carlo-inside-interval", outside_mc == 0, cones=n,
                   violations=int(outside_mc))
    with _Timer(res):
        bad, worst = polyline_subdivision_check(cfg, rng)
        res.record("polyline-clip-vs-subdivision", bad == 0, worst_relative=worst)
    with _Timer(res):
        worst, bad = quadrature_refinement_check(cfg, rng)
        res.record("quadrature-refinement-within-error", bad == 0, violations=bad,
                   worst_change_over_err=worst)
    return res


def subdivision_mass(poly: Polyline, pieces: int, cone: Cone) -> float:
    """Length of ``poly`` in ``cone`` using midpoints of a uniform subdivision."""
    L = poly.lengths
    counts = np.maximum(1, np.round(pieces * L / L.sum()).astype(int))
    total = 0.0
    for a, b, n, l in zip(poly.starts, poly.ends, counts, L):
        t = (np.arange(n) + 0.5) / n
        pts = a[None, :] + t[:, None] * (b - a)[None, :]
        total += cone_contains_many(cone, pts).sum() * (l / n)
    return float(total)


def polyline_subdivision_check(cfg: RunConfig, rng, cones: int = 8, pieces: int = 1_000_000):
    en = en_set(cfg.M, 2, cfg.budget)
    poly, _ = en.materialize_union(1)
    meas = PolylineMeasure(poly)
    from .energy import cone_mass

    bad = 0
    worst = 0.0
    done = 0
    while done < cones:
        c = Cone(rng.uniform(-0.6, 0.6, 2), rng.uniform(0, math.pi), rng.uniform(0.1, 1.2),
                 0.0, rng.uniform(0.3, 1.5))
        exact = cone_mass(meas, c).lo
        if exact < 0.1:
            continue
        done += 1
        rel = abs(subdivision_mass(poly, pieces, c) - exact) / exact
        worst = max(worst, rel)
        bad += rel > 1e-4
    return bad, worst


def quadrature_refinement_check(cfg: RunConfig, rng, points: int = 4):
    """``|E(q) - E(sqrt q)| <= err(q)`` on bad points, a segment and ball-tree points."""
    en = en_set(cfg.M, 2, cfg.budget)
    worst = 0.0
    bad = 0
    cases = []
    meas = EnMeasure(en)
    for p, _ in en.bad_set_sample(points, cfg.seed):
        cases.append((meas, p, en.default_r_min()))
    seg = PolylineMeasure(Polyline.from_vertices([[-1.0, 0.3], [1.0, -0.2]]))
    cases.append((seg, np.array([0.1, 0.225]), 1e-4))
    from .energy import JmMeasure

    jmm = JmMeasure(jm_params(cfg), levels=8)
    for _ in range(points):
        x = mu_samples(jm_params(cfg), 1, 10, rng)[0]
        cases.append((jmm, x, 1e-4))
    th = theta_grid(cfg.alpha / 4)
    for p_exp in (1.0, 2.0):
        for m, x, r_min in cases:
            q = EnergyQuadrature(r_min, p_exp, cfg.grid_ratio)
            a = energies_over_directions(m, x, th, cfg.alpha, 1.0, q, cfg.tol)
            b = energies_over_directions(m, x, th, cfg.alpha, 1.0, q.refined(), cfg.tol)
            for ea, eb in zip(a, b):
                change = abs(ea.value - eb.value)
                if ea.err > 0:
                    worst = max(worst, change / ea.err)
                bad += change > ea.err + 1e-12 * abs(ea.value)
    return worst, bad


SUITES = {
    "p-props": suite_p_props,
    "gamma-maps": suite_gamma_maps,
    "cone-lemma": suite_cone_lemma,
    "bplg": suite_bplg,
    "adr": suite_adr,
    "en-energy": suite_en_energy,
    "jm-structure": suite_jm_structure,
    "jm-diverge": suite_jm_diverge,
    "jm-bounded": suite_jm_bounded,
    "engine": suite_engine,
}


def run_suite(name: str, cfg: RunConfig) -> SuiteResult:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    t0 = time.perf_counter()
    res = SUITES[name](cfg)
    res.runtime = time.perf_counter() - t0
    return res
