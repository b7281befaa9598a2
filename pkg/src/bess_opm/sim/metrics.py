"""Summary statistics of a simulation report."""

from __future__ import annotations

import numpy as np

BALANCE_HOLD = 60.0


def _stat(x, fn):
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    return float(fn(x)) if x.size else None


def time_to_balance(t, socdev_max, soc_band, hold=BALANCE_HOLD):
    """First time after which the SoC deviation stays <= ``soc_band`` for ``hold`` s."""
    t = np.asarray(t, dtype=float)
    ok = np.asarray(socdev_max) <= soc_band
    for i in np.flatnonzero(ok):
        end = t[i] + hold
        if end > t[-1] + 1e-9:
            return None
        window = (t >= t[i]) & (t <= end + 1e-9)
        if ok[window].all():
            return float(t[i])
    return None


def _runtime_stats(solves):
    rt = np.array([s["runtime"] for s in solves], dtype=float)
    if rt.size == 0:
        return {"count": 0}
    return {
        "count": int(rt.size),
        "mean": float(rt.mean()),
        "median": float(np.median(rt)),
        "max": float(rt.max()),
        "total": float(rt.sum()),
    }


def metrics(report, scenario=None):
    """Deviation, loss, violation and runtime summary of ``report``."""
    cfg = report.config or {}
    if scenario is not None:
        dt, soc_band = scenario.dt, scenario.opm.soc_band
    else:
        dt = float(cfg.get("dt", report.t[1] - report.t[0] if report.t.size > 1 else 1.0))
        soc_band = float(cfg.get("opm", {}).get("soc_band", 0.005))
    out = {"records": int(report.t.size)}
    if report.soc is not None:
        soc_abs = np.abs(report.soc - report.soc.mean(axis=1, keepdims=True))
        temp_abs = np.abs(report.temp - report.temp.mean(axis=1, keepdims=True))
        out["soc_dev_mean"] = _stat(soc_abs, np.mean)
        out["temp_dev_mean"] = _stat(temp_abs, np.mean)
    out["soc_dev_max"] = _stat(report.socdev_max, np.max)
    out["temp_dev_max"] = _stat(report.tempdev_max, np.max)
    loss = np.nan_to_num(report.loss_w[:-1])
    out["energy_loss_j"] = float(loss.sum() * dt)
    out["violation_s"] = {k: float(np.count_nonzero(v) * dt) for k, v in report.violations.items()}
    out["time_to_balance_s"] = time_to_balance(report.t, report.socdev_max, soc_band)
    out["solve_runtime_s"] = _runtime_stats(report.solves)
    out["faults"] = len(report.faults)
    return out


__all__ = ["metrics", "time_to_balance", "BALANCE_HOLD"]
