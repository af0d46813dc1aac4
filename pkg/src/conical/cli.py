"""Command-line front end: ``build``, ``verify``, ``sweep`` and ``export``.

Configuration is layered: defaults, then ``--config`` JSON, then ``CONICAL_<FIELD>``
environment variables, then command-line flags.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import jm
from .config import RunConfig, load_config
from .energy import jm_energy_deep
from .report import format_summary, load_baseline, write_csv, write_report
from .suites import (
    ENERGY_COLUMNS,
    SUITES,
    FigureSpec,
    Table,
    en_bad_point_scan,
    en_set,
    jm_params,
    run_suite,
)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _map(cfg: RunConfig, fn, items) -> list:
    """Apply ``fn`` over ``items`` on ``cfg.threads`` workers, keeping input order."""
    if cfg.threads == 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(cfg.threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------------
# build


def build_en_artifacts(cfg: RunConfig, out: str) -> dict:
    en = en_set(cfg.M, cfg.N, cfg.budget)
    files = []
    path = os.path.join(out, "graph.csv")
    en.graph.export_csv(path)
    files.append(path)
    for k in range(cfg.export_depth + 1):
        path = os.path.join(out, f"layer{k}.csv")
        en.export_csv(path, k)
        files.append(path)
    derived = dict(
        n_slots=en.n_slots,
        r=[en.params.radius(k) for k in range(1, 5)],
        log2_r=[en.params.log2_r(k) for k in range(1, 5)],
        bad_length=en.bad_length,
        log2_bad_length=math.log2(en.bad_length),
        total_length=en.total_length,
        layer_lengths=[en.layer_length(k) for k in range(4)],
        layer_segments=[en.layer_segment_count(k) for k in range(4)],
    )
    params = dict(M=cfg.M, N=cfg.N, budget=cfg.budget)
    return dict(params=params, derived=derived, files=files)


def build_jm_artifacts(cfg: RunConfig, out: str) -> dict:
    P = jm_params(cfg)
    depth = cfg.audit_depth
    path = os.path.join(out, f"generation{depth}.csv")
    jm.export_generation_csv(P, depth, path)
    derived = dict(
        ball_count=math.prod(cfg.M * k for k in range(1, depth + 1)),
        log_r=[jm.log_radius(P, k) for k in range(depth + 1)],
        log_mass=[jm.log_mass(P, k) for k in range(depth + 1)],
        n0=jm.n0_for(cfg.alpha, cfg.M, P.beta),
    )
    params = dict(M=cfg.M, beta_c=cfg.beta_c, depth_cap=cfg.depth_cap, depth=depth,
                  alpha=cfg.alpha)
    return dict(params=params, derived=derived, files=[path])


def cmd_build(cfg: RunConfig) -> dict:
    os.makedirs(cfg.out, exist_ok=True)
    if cfg.construction == "en":
        art = build_en_artifacts(cfg, cfg.out)
    else:
        art = build_jm_artifacts(cfg, cfg.out)
    manifest = dict(
        construction=cfg.construction,
        params=art["params"],
        derived=art["derived"],
        checksums={os.path.basename(f): _sha256(f) for f in art["files"]},
    )
    with open(os.path.join(cfg.out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest


# ---------------------------------------------------------------------------------
# verify


def cmd_verify(cfg: RunConfig, suites, baseline=None) -> dict:
    names = list(SUITES) if "all" in suites else suites
    results = [run_suite(name, cfg) for name in names]
    return write_report(results, cfg.out, cfg.to_dict(), baseline)


# ---------------------------------------------------------------------------------
# sweeps


def sweep_N(cfg: RunConfig) -> Table:
    """Energies at the same sample indices for every ``N``: one row per (sample, theta, N)."""

    def one(N):
        return N, en_bad_point_scan(cfg, N) if cfg.energy_points else []

    per_N = _map(cfg, one, list(cfg.N_values))
    rows = []
    for i in range(cfg.energy_points):
        for N, scans in per_N:
            _, pos, s = scans[i]
            for th, e, err in zip(s.thetas, s.energies, s.errors):
                rows.append([f"en:{i}", cfg.M, N, pos[0], pos[1], th, cfg.alpha, cfg.p, 1.0,
                             e, err, 0])
    rows.sort(key=lambda r: (int(r[0][3:]), r[5], r[2]))
    return Table(ENERGY_COLUMNS, rows)


def sweep_K(cfg: RunConfig) -> Table:
    """Partial block energies along the middle address for every ``K`` in ``K_values``."""
    P = jm_params(cfg)
    Ks = sorted(cfg.K_values)
    if not Ks or not cfg.jm_thetas:
        return Table(ENERGY_COLUMNS, [])
    thetas = list(cfg.jm_thetas)
    deps = _map(cfg, lambda th: jm_energy_deep(P, [th], cfg.alpha, Ks[-1], cfg.p, tol=cfg.tol,
                                               levels=cfg.jm_levels), thetas)
    x = jm.JmPoint(jm.middle_address(P, 12)).position(P)
    R = 4.0 * jm.radius(P, 1)
    rows = []
    for K in Ks:
        for th, dep in zip(thetas, deps):
            v = float(dep.partial(K)[0])
            lo, hi = dep.partial_bounds(K)
            rows.append(["jm:middle", cfg.M, K, x[0], x[1], th, cfg.alpha, cfg.p, R, v,
                         max(v - lo[0], hi[0] - v), int(dep.flags[1:K + 1, 0].sum())])
    return Table(ENERGY_COLUMNS, rows)


def cmd_sweep(cfg: RunConfig, figures: bool = True) -> str:
    os.makedirs(cfg.out, exist_ok=True)
    if cfg.construction == "en":
        table, name, x = sweep_N(cfg), "sweep_en.csv", "N_or_Kmax"
    else:
        table, name, x = sweep_K(cfg), "sweep_jm.csv", "N_or_Kmax"
    path = os.path.join(cfg.out, name)
    write_csv(path, table.columns, table.rows)
    if figures and table.rows:
        from .report import render_figure

        if cfg.construction == "en":
            # mean over samples of the direction minimum, per N
            mins = {}
            for r in table.rows:
                key = (r[0], r[2])
                mins[key] = min(mins.get(key, math.inf), r[9])
            agg = {}
            for (_, N), v in mins.items():
                agg.setdefault(N, []).append(v)
            trend = Table(["N_or_Kmax", "energy"], [[N, float(np.mean(v))] for N, v in agg.items()])
            spec = FigureSpec("trend", "t", x, "energy", title="mean direction-minimised energy")
        else:
            trend = Table(["N_or_Kmax", "energy", "theta"], [[r[2], r[9], r[5]] for r in table.rows])
            spec = FigureSpec("trend", "t", x, "energy", "theta", logx=True,
                              title="partial block energies")
        render_figure(path[:-4] + ".png", trend, spec)
    return path


# ---------------------------------------------------------------------------------
# export


def cmd_export(cfg: RunConfig, what: str, layer: int) -> str:
    os.makedirs(cfg.out, exist_ok=True)
    if what == "graph":
        path = os.path.join(cfg.out, f"graph_M{cfg.M}_N{cfg.N}.csv")
        en_set(cfg.M, cfg.N, cfg.budget).graph.export_csv(path)
    elif what == "layer":
        path = os.path.join(cfg.out, f"layer{layer}_M{cfg.M}_N{cfg.N}.csv")
        en_set(cfg.M, cfg.N, cfg.budget).export_csv(path, layer)
    else:
        path = os.path.join(cfg.out, f"generation{layer}_M{cfg.M}.csv")
        jm.export_generation_csv(jm_params(cfg), layer, path)
    return path


# ---------------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int)
    common.add_argument("--construction", choices=["en", "jm"])
    common.add_argument("--M", type=int)
    common.add_argument("--N", type=int)
    common.add_argument("--alpha", type=float)
    common.add_argument("--p", type=float)
    common.add_argument("--set", action="append", default=[], metavar="FIELD=VALUE",
                        help="override any configuration field (repeatable)")

    ap = argparse.ArgumentParser(prog="conical", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("build", parents=[common], help="write construction artifacts and a manifest")
    v = sub.add_parser("verify", parents=[common], help="run verification suites")
    v.add_argument("--suite", action="append", default=[],
                   choices=sorted(SUITES) + ["all"], help="suite name (repeatable)")
    v.add_argument("--baseline", help="baseline JSON for drift detection")
    v.add_argument("--write-baseline", help="store the measured constants to this path")
    s = sub.add_parser("sweep", parents=[common], help="energy sweep CSV over N or K_max")
    s.add_argument("--no-figures", action="store_true")
    e = sub.add_parser("export", parents=[common], help="export one CSV")
    e.add_argument("what", choices=["graph", "layer", "generation"])
    e.add_argument("--layer", type=int, default=0, help="layer or generation index")
    return ap


def config_from_args(args) -> RunConfig:
    overrides = {k: getattr(args, k) for k in
                 ("seed", "out", "threads", "construction", "M", "N", "alpha", "p")}
    for item in args.set:
        key, sep, val = item.partition("=")
        if not sep or key not in RunConfig.field_names():
            raise ValueError(f"bad override {item!r}")
        overrides[key] = val
    return load_config(args.config, **overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "build":
            manifest = cmd_build(cfg)
            print(json.dumps(manifest["derived"], indent=2))
            return 0
        if args.command == "verify":
            baseline = load_baseline(args.baseline) if args.baseline else None
            summary = cmd_verify(cfg, args.suite or ["all"], baseline)
            print(format_summary(summary))
            if args.write_baseline:
                from .report import baseline_from_summary

                with open(args.write_baseline, "w") as fh:
                    json.dump(baseline_from_summary(summary), fh, indent=2)
            return 0 if summary["ok"] else 1
        if args.command == "sweep":
            print(cmd_sweep(cfg, figures=not args.no_figures))
            return 0
        print(cmd_export(cfg, args.what, args.layer))
        return 0
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
