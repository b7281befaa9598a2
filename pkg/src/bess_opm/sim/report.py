"""Report persistence: ``report.json``, ``series.csv`` and ``diagnostics.csv``.

Floats are written with 17 significant digits, so a report read back from
disk equals the in-memory one for every non-timing field.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .closedloop import SimulationReport

SERIES_BASE = ("t", "p_pred", "p_act", "p_supplied", "v_bus", "theta1", "theta2", "theta3", "loss_w",
               "socdev_max", "tempdev_max")
DIAG_COLS = ("t", "p_tilde", "p_alloc", "shortfall", "n_saturated")
QUANTILES = (("min", 0.0), ("p50", 0.5), ("max", 1.0))
FMT = "%.17g"


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return FMT % float(x)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _series_columns(report, full):
    cols = {
        "t": report.t,
        "p_pred": report.p_pred,
        "p_act": report.p_act,
        "p_supplied": report.p_supplied,
        "v_bus": report.v_bus,
        "theta1": report.theta[:, 0],
        "theta2": report.theta[:, 1],
        "theta3": report.theta[:, 2],
        "loss_w": report.loss_w,
        "socdev_max": report.socdev_max,
        "tempdev_max": report.tempdev_max,
    }
    blocks = (("q", report.soc), ("T", report.temp), ("mu", report.mu))
    for prefix, arr in blocks:
        if arr is None:
            continue
        if full:
            for j in range(arr.shape[1]):
                cols[f"{prefix}_{j + 1}"] = arr[:, j]
        else:
            for tag, qq in QUANTILES:
                cols[f"{prefix}_{tag}"] = np.quantile(arr, qq, axis=1)
    return cols


def _write_csv(path, cols):
    names = list(cols)
    data = [cols[k] for k in names]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in zip(*data):
            w.writerow([_fmt(x) for x in row])


def write_report(report, out_dir, full_series=True):
    """Write the three report files into ``out_dir`` (created if needed)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "series.csv", _series_columns(report, full_series))
    _write_csv(
        out / "diagnostics.csv",
        {
            "t": report.t,
            "p_tilde": report.p_tilde,
            "p_alloc": report.p_alloc,
            "shortfall": report.shortfall,
            "n_saturated": report.n_saturated,
        },
    )
    doc = {
        "summary": report.summary,
        "config": report.config,
        "solves": report.solves,
        "faults": report.faults,
        "violations": {k: np.flatnonzero(v).tolist() for k, v in report.violations.items()},
        "records": int(report.t.size),
        "full_series": bool(full_series),
    }
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(_jsonable(doc), fh, indent=2)
    return out


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    arr = np.array([[float(x) for x in r] for r in body]) if body else np.empty((0, len(header)))
    return {name: arr[:, i] for i, name in enumerate(header)}


def _stack(cols, prefix):
    keys = [k for k in cols if k.startswith(prefix + "_") and k[len(prefix) + 1 :].isdigit()]
    if not keys:
        return None
    keys.sort(key=lambda k: int(k[len(prefix) + 1 :]))
    return np.stack([cols[k] for k in keys], axis=1)


def read_report(out_dir):
    """Inverse of :func:`write_report`; per-cell arrays are ``None`` for quantile reports."""
    out = Path(out_dir)
    cols = _read_csv(out / "series.csv")
    diag = _read_csv(out / "diagnostics.csv")
    with open(out / "report.json", encoding="utf-8") as fh:
        doc = json.load(fh)
    records = doc["records"]
    violations = {}
    for k, idx in doc["violations"].items():
        mask = np.zeros(records, dtype=bool)
        mask[np.asarray(idx, dtype=int)] = True
        violations[k] = mask
    return SimulationReport(
        t=cols["t"],
        p_pred=cols["p_pred"],
        p_act=cols["p_act"],
        p_supplied=cols["p_supplied"],
        v_bus=cols["v_bus"],
        theta=np.stack([cols["theta1"], cols["theta2"], cols["theta3"]], axis=1),
        loss_w=cols["loss_w"],
        soc=_stack(cols, "q"),
        temp=_stack(cols, "T"),
        mu=_stack(cols, "mu"),
        p_tilde=diag["p_tilde"],
        p_alloc=diag["p_alloc"],
        shortfall=diag["shortfall"],
        n_saturated=diag["n_saturated"].astype(int),
        socdev_max=cols["socdev_max"],
        tempdev_max=cols["tempdev_max"],
        violations=violations,
        solves=doc["solves"],
        faults=doc["faults"],
        config=doc["config"],
        summary=doc["summary"],
    )


__all__ = ["write_report", "read_report", "SERIES_BASE"]
