"""Runtime comparison of the EnKI solver against the cell-level baseline."""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .. import enki
from ..baseline import MAX_CELL_STEPS, SolverOptions, solve_cell_level
from ..cell import CellState, PackParameters
from ..problem import OpmConfig

THREADS_ENV = "BESS_OPM_THREADS"
WATTS_PER_CELL = 10.0  # 2 kW over 200 cells


@dataclass
class CompareRow:
    n: int
    horizon: int
    particles: int
    enki_s: float
    baseline_s: float | None
    reduction_pct: float | None
    baseline_status: str
    enki_iterations: float


def instance(n, horizon, seed):
    """Default pack with randomized SoC and resistance, constant 10 W-per-cell discharge."""
    rng = np.random.default_rng([seed, n, horizon])
    params = PackParameters(n=n, res_base=rng.uniform(0.0313, 0.0413, n))
    state = CellState(rng.uniform(0.70, 0.75, n), np.full(n, 298.0))
    forecast = np.full(horizon + 1, WATTS_PER_CELL * n)
    return params, state, forecast, OpmConfig(horizon=horizon)


def worker_count():
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _time_cell(n, horizon, particles, repeats, seed, baseline_opts):
    inst = [instance(n, horizon, seed + r) for r in range(repeats)]
    base_times, statuses = [], []
    if n * horizon > MAX_CELL_STEPS:
        statuses.append("skipped")
    else:
        for params, state, fc, opm in inst:
            res = solve_cell_level(state, fc, params, opm, baseline_opts)
            base_times.append(res.runtime)
            statuses.append(res.status)
    rows = []
    for m in particles:
        times, iters = [], []
        for r, (params, state, fc, opm) in enumerate(inst):
            cfg = enki.EnkiConfig(particles=m, seed=seed + r)
            start = time.perf_counter()
            est = enki.solve(state, fc, params, opm, cfg)
            times.append(time.perf_counter() - start)
            iters.append(est.iterations_run)
        e = float(np.mean(times))
        b = float(np.mean(base_times)) if base_times else None
        rows.append(
            CompareRow(
                n=n,
                horizon=horizon,
                particles=m,
                enki_s=e,
                baseline_s=b,
                reduction_pct=None if b is None else 100.0 * (1.0 - e / b),
                baseline_status="skipped" if not base_times else ",".join(sorted(set(statuses))),
                enki_iterations=float(np.mean(iters)),
            )
        )
    return rows


def compare(sizes, horizons, particles, *, repeats=3, seed=0, baseline_opts=SolverOptions(), workers=None):
    """Mean wall-clock per solve for every (n, H, M); baseline timed once per (n, H)."""
    jobs = [(n, h) for n in sizes for h in horizons]
    workers = worker_count() if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_time_cell, n, h, tuple(particles), repeats, seed, baseline_opts) for n, h in jobs]
            chunks = [f.result() for f in futs]
    else:
        chunks = [_time_cell(n, h, tuple(particles), repeats, seed, baseline_opts) for n, h in jobs]
    return [row for chunk in chunks for row in chunk]


def table_markdown(rows):
    """Markdown table: one line per (n, H), EnKI time and reduction per M."""
    ms = sorted({r.particles for r in rows})
    head = ["n", "H", "cell-level (s)"]
    for m in ms:
        head += [f"EnKI M={m} (s)", f"reduction M={m} (%)"]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    keys = sorted({(r.n, r.horizon) for r in rows})
    for n, h in keys:
        group = {r.particles: r for r in rows if (r.n, r.horizon) == (n, h)}
        first = next(iter(group.values()))
        cells = [str(n), str(h), "skipped" if first.baseline_s is None else f"{first.baseline_s:.3f}"]
        for m in ms:
            r = group.get(m)
            cells.append("" if r is None else f"{r.enki_s:.4f}")
            cells.append("" if r is None or r.reduction_pct is None else f"{r.reduction_pct:.2f}")
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def write_comparison(rows, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fields = list(asdict(rows[0])) if rows else list(CompareRow.__dataclass_fields__)
    with open(out / "comparison.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow(asdict(r))
    with open(out / "comparison.json", "w", encoding="utf-8") as fh:
        json.dump([asdict(r) for r in rows], fh, indent=2)
    (out / "runtime_table.md").write_text(table_markdown(rows), encoding="utf-8")
    return out


__all__ = ["CompareRow", "instance", "compare", "table_markdown", "write_comparison", "worker_count", "THREADS_ENV"]
