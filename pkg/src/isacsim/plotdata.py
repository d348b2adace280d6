"""Turn finished run directories into (series, x, y) CSV tables, one per figure panel."""

from __future__ import annotations

import json
from collections import defaultdict
from pathlib import Path

import numpy as np

from .io import read_csv, write_csv

HEADER = ["series", "x", "y"]

SWEEPS = {
    "cavs": ("counts", "cavs"),
    "hdvs": ("counts", "hdvs"),
    "rsus": ("counts", "rsus"),
    "antennas": ("counts", "antennas"),
    "power": ("physics", "p_max_dbm"),
}

PER_RUN = ("ttc_convergence", "crb_convergence", "cr_over_time", "kl_per_step",
           "spacing_error", "velocity_error", "acceleration", "input_acceleration")
KEYS = PER_RUN[:3] + tuple(f"{m}_vs_{s}" for s in SWEEPS for m in ("ttc", "crb")) + PER_RUN[3:]

TRACE_FIELDS = {"spacing_error": "spacing_error", "velocity_error": "velocity_error",
                "acceleration": "accel", "input_acceleration": "input_u"}


class PlotDataError(ValueError):
    pass


def _need(path: Path) -> Path:
    if not path.exists():
        raise PlotDataError(f"missing {path}")
    return path


def _trace_episode(rows):
    """Rows of the first evaluation episode, else of the last training episode."""
    evals = [r for r in rows if r["phase"] == "eval"]
    pool = evals if evals else rows
    if not pool:
        raise PlotDataError("trace is empty")
    ep = pool[0]["episode"] if evals else pool[-1]["episode"]
    return [r for r in pool if r["episode"] == ep]


def _per_run(results: Path, key: str) -> list:
    if key in ("ttc_convergence", "crb_convergence"):
        rows = read_csv(_need(results / "metrics.csv"))
        if key == "ttc_convergence":
            return [["mean_ttc", int(r["episode"]), float(r["mean_ttc"])] for r in rows]
        return ([["crb_theta", int(r["episode"]), float(r["mean_crb_theta"])] for r in rows] +
                [["crb_d", int(r["episode"]), float(r["mean_crb_d"])] for r in rows])
    if key == "kl_per_step":
        rows = read_csv(_need(results / "voi.csv"))
        return [[f"v{r['vehicle']}<-v{r['source']}:{r['timescale']}", int(r["episode"]),
                 float(r["kl_bits"])] for r in rows]
    rows = _trace_episode(read_csv(_need(results / "trace.csv")))
    if key == "cr_over_time":
        by_t = defaultdict(list)
        for r in rows:
            by_t[float(r["time"])].append(int(r["cr"]))
        return [["cr_fraction", t, float(np.mean(v))] for t, v in sorted(by_t.items())]
    field = TRACE_FIELDS[key]
    out = [[f"v{r['vehicle']}", float(r["time"]), float(r[field])] for r in rows]
    return sorted(out, key=lambda row: (int(row[0][1:]), row[1]))


def _sweep(results: Path, metric: str, axis: str) -> list:
    section, name = SWEEPS[axis]
    groups = defaultdict(list)
    runs = sorted(p.parent for p in results.glob("*/evaluation.csv"))
    if not runs:
        raise PlotDataError(f"no run directories with evaluation.csv under {results}")
    for run in runs:
        cfg = json.loads(_need(run / "config.json").read_text())
        kind = json.loads((run / "run.json").read_text())["kind"] if (run / "run.json").exists() else "run"
        x = cfg[section][name]
        for r in read_csv(run / "evaluation.csv"):
            if metric == "ttc":
                groups[(kind, x)].append(float(r["mean_ttc"]))
            else:
                groups[(f"{kind}:crb_theta", x)].append(float(r["mean_crb_theta"]))
                groups[(f"{kind}:crb_d", x)].append(float(r["mean_crb_d"]))
    label = " (desk-scale range)" if axis == "hdvs" else ""
    return [[f"{series}{label}", x, float(np.mean(v))] for (series, x), v in sorted(groups.items())]


def plot_rows(results, key: str) -> list:
    results = Path(results)
    if key not in KEYS:
        raise PlotDataError(f"unknown figure key {key!r}; valid keys: {', '.join(KEYS)}")
    if key in PER_RUN:
        return _per_run(results, key)
    metric, _, axis = key.partition("_vs_")
    return _sweep(results, metric, axis)


def write_plotdata(results, key: str, out=None) -> Path:
    rows = plot_rows(results, key)
    path = Path(out) if out is not None else Path(results) / "plotdata" / f"{key}.csv"
    write_csv(path, HEADER, rows)
    return path
