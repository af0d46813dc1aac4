"""Report writers: JSON summary, CSV tables and matplotlib figures."""

from __future__ import annotations

import csv
import json
import math
import os
from importlib import resources

import numpy as np

from .suites import SuiteResult

BASELINE_TOLERANCE = 0.25


def _plain(obj):
    """Convert numpy scalars and arrays for JSON."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def suite_summary(res: SuiteResult) -> dict:
    return dict(
        suite=res.suite,
        ok=res.ok,
        runtime=res.runtime,
        records=[dict(tag=r.tag, status=r.status, measured=_plain(r.measured),
                      runtime=r.runtime, detail=r.detail) for r in res.records],
    )


def load_baseline(path=None) -> dict:
    """Measured constants from a reference run, keyed ``suite -> tag -> measured``."""
    if path is None:
        ref = resources.files("conical") / "data" / "baseline.json"
        if not ref.is_file():
            return {}
        return json.loads(ref.read_text())
    with open(path) as fh:
        return json.load(fh)


def baseline_drift(res: SuiteResult, baseline: dict, tol: float = BASELINE_TOLERANCE) -> list:
    """Scalar measurements that moved more than ``tol`` (relative) from the baseline."""
    ref = baseline.get(res.suite, {})
    out = []
    for r in res.records:
        old = ref.get(r.tag)
        if not old:
            continue
        for key, val in r.measured.items():
            base = old.get(key)
            if not isinstance(base, (int, float)) or not isinstance(val, (int, float, np.generic)):
                continue
            val = float(val)
            scale = max(abs(base), 1e-300)
            if abs(val - base) > tol * scale:
                out.append(dict(tag=r.tag, key=key, value=val, baseline=base))
    return out


def baseline_from_summary(summary: dict) -> dict:
    return {s["suite"]: {r["tag"]: r["measured"] for r in s["records"] if r["measured"]}
            for s in summary["suites"]}


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def render_figure(path, table, spec) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cols = table.columns
    xi, yi = cols.index(spec.x), cols.index(spec.y)
    groups = {}
    gi = cols.index(spec.group) if spec.group else None
    for row in table.rows:
        key = row[gi] if gi is not None else ""
        groups.setdefault(key, []).append((row[xi], row[yi]))
    fig, ax = plt.subplots(figsize=(6, 4))
    for key, pts in groups.items():
        pts.sort()
        x, y = zip(*pts)
        label = f"{spec.group}={key:.4g}" if isinstance(key, float) else (str(key) or None)
        ax.plot(x, y, marker="o", ms=3, label=label)
    if spec.logx:
        ax.set_xscale("log")
    if spec.logy:
        ax.set_yscale("log")
    ax.set_xlabel(spec.x)
    ax.set_ylabel(spec.y)
    if spec.title:
        ax.set_title(spec.title)
    if gi is not None:
        ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_report(results, out_dir, config: dict | None = None, baseline: dict | None = None,
                 figures: bool = True) -> dict:
    """Write ``report.json``, one CSV per table and one PNG per figure; return the summary."""
    os.makedirs(out_dir, exist_ok=True)
    baseline = load_baseline() if baseline is None else baseline
    summary = dict(config=_plain(config or {}), ok=all(r.ok for r in results), suites=[])
    for res in results:
        s = suite_summary(res)
        s["baseline_drift"] = _plain(baseline_drift(res, baseline))
        s["files"] = []
        for name, table in res.tables.items():
            fname = f"{res.suite}_{name}.csv"
            write_csv(os.path.join(out_dir, fname), table.columns, table.rows)
            s["files"].append(fname)
        if figures:
            for spec in res.figures:
                table = res.tables.get(spec.table)
                if table is None or not table.rows:
                    continue
                fname = f"{res.suite}_{spec.name}.png"
                render_figure(os.path.join(out_dir, fname), table, spec)
                s["files"].append(fname)
        summary["suites"].append(s)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    return summary


def format_summary(summary: dict) -> str:
    lines = []
    for s in summary["suites"]:
        lines.append(f"[{'PASS' if s['ok'] else 'FAIL'}] {s['suite']} ({s['runtime']:.1f}s)")
        for r in s["records"]:
            if r["status"] == "fail":
                lines.append(f"    fail: {r['tag']} {r['measured']}")
        for d in s.get("baseline_drift", []):
            lines.append(f"    drift: {d['tag']} {d['key']} = {d['value']:.4g} "
                         f"(baseline {d['baseline']:.4g})")
    return "\n".join(lines)
