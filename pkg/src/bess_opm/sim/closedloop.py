"""Two-rate closed loop: periodic OPM re-solve, per-step low-level control."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .. import cell, enki
from ..errors import ModelError, SimulationFault, SolverError
from ..lowlevel import BusModel, PiState, allocate, bus_step, pi_mismatch
from ..policy import features, psr
from ..problem import INEQ_CLASSES, SOC_FEATURE_FLOOR
from .demand import gen_demand

log = logging.getLogger(__name__)

CURRENT_TOL = 1e-9


@dataclass
class SimulationReport:
    t: np.ndarray
    p_pred: np.ndarray
    p_act: np.ndarray
    p_supplied: np.ndarray
    v_bus: np.ndarray
    theta: np.ndarray  # (N+1, 3)
    loss_w: np.ndarray
    soc: np.ndarray | None  # (N+1, n)
    temp: np.ndarray | None
    mu: np.ndarray | None
    p_tilde: np.ndarray
    p_alloc: np.ndarray
    shortfall: np.ndarray
    n_saturated: np.ndarray
    socdev_max: np.ndarray
    tempdev_max: np.ndarray
    violations: dict  # class name -> (N+1,) bool
    solves: list = field(default_factory=list)
    faults: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    @property
    def records(self):
        return self.t.size


def solve_seed(seed, index):
    """EnKI seed of the ``index``-th OPM solve of a run."""
    return int(np.random.SeedSequence([seed, 3, index]).generate_state(1, dtype=np.uint64)[0])


def forecast_window(p_pred, k, horizon):
    """``p_pred[k..k+H]``, padded with the last value past the end."""
    idx = np.minimum(np.arange(k, k + horizon + 1), p_pred.size - 1)
    return p_pred[idx]


def _deviation(x):
    return np.max(np.abs(x - x.mean()))


def _violations(params, opm, state, refs):
    q, temp = np.asarray(state.soc), np.asarray(state.temp)
    u = cell.ocv(params, np.clip(q, 0.0, 1.0))
    i = refs / u
    lo, hi = params.current_limits
    return {
        "temp_bounds": bool(np.any((temp < params.temp_limits[0]) | (temp > params.temp_limits[1]))),
        "soc_bounds": bool(np.any((q < params.soc_limits[0]) | (q > params.soc_limits[1]))),
        "current_bounds": bool(np.any((i < lo - CURRENT_TOL) | (i > hi + CURRENT_TOL))),
        "soc_band": bool(_deviation(q) > opm.soc_band),
        "temp_band": bool(_deviation(temp) > opm.temp_band),
    }


def run_closed_loop(scenario, *, progress=None):
    """Simulate ``scenario`` and return a :class:`SimulationReport`.

    A failed OPM solve keeps the previous theta and is logged as a fault.
    An undefined electro-thermal state or a collapsed bus raises
    :class:`SimulationFault` carrying the partial report as ``report``.
    """
    sc = scenario
    params, opm = sc.params, sc.opm
    steps, dt, n = sc.steps, sc.dt, sc.n
    p_pred, p_act = gen_demand(sc.demand, sc.duration, dt, sc.seed)
    low = sc.lowlevel
    pi = PiState(kp=low.kp, ki=low.ki, v_ref=low.v_ref, integral_limit=low.integral_limit)
    bus = BusModel(mode=low.bus_mode, v_ref=low.v_ref, gain=low.gain, capacitance=low.capacitance)

    rec = {k: np.full(steps + 1, np.nan) for k in ("p_supplied", "v_bus", "loss_w", "p_tilde", "p_alloc", "shortfall")}
    n_sat = np.zeros(steps + 1, dtype=int)
    theta_rec = np.full((steps + 1, 3), np.nan)
    soc_rec = np.full((steps + 1, n), np.nan)
    temp_rec = np.full((steps + 1, n), np.nan)
    mu_rec = np.full((steps + 1, n), np.nan)
    viol = {name: np.zeros(steps + 1, dtype=bool) for name in INEQ_CLASSES}
    solves, faults = [], []

    state = cell.CellState(np.array(sc.initial.soc, dtype=float), np.array(sc.initial.temp, dtype=float))
    theta = np.asarray(opm.theta_nominal, dtype=float)
    prior_mean = theta.copy()
    all_saturated = False
    solve_index = 0

    def partial():
        return _assemble(sc, steps, p_pred, p_act, rec, n_sat, theta_rec, soc_rec, temp_rec, mu_rec, viol, solves, faults)

    for k in range(steps + 1):
        t = k * dt
        if k < steps and k % sc.opm_every == 0:
            cfg = replace(sc.enki, seed=solve_seed(sc.seed, solve_index))
            fc = forecast_window(p_pred, k, opm.horizon)
            start = time.perf_counter()
            try:
                est = enki.solve(state, fc, params, opm, cfg, sc.policy, theta_nominal=prior_mean)
            except (SolverError, ModelError) as exc:
                runtime = time.perf_counter() - start
                faults.append({"t": t, "kind": "solver", "message": str(exc)})
                log.warning("OPM solve at t=%g failed: %s", t, exc)
            else:
                runtime = time.perf_counter() - start
                theta = est.mean
                if sc.warm_start:
                    prior_mean = theta.copy()
                solves.append(
                    {
                        "t": t,
                        "runtime": runtime,
                        "iterations": est.iterations_run,
                        "theta": theta.tolist(),
                        "covariance": est.covariance.tolist(),
                        "lambdas": est.lambdas,
                        "warnings": list(est.warnings),
                    }
                )
            solve_index += 1
            if progress:
                progress(k, steps)

        try:
            feat_state = cell.CellState(np.maximum(state.soc, SOC_FEATURE_FLOOR), state.temp)
            mu = psr(features(feat_state, params, p_pred[k], sc.policy), theta)
            p_tilde = pi_mismatch(pi, bus.voltage, dt, freeze_integral=all_saturated)
            refs, sat = allocate(mu, p_pred[k], p_tilde, params, state)
            loss = float(np.sum(cell.module_loss(params, state, 1.0, refs)))
            alloc = float(refs.sum())
            supplied = alloc - loss
            v = bus_step(bus, supplied, p_act[k], dt)
        except ModelError as exc:
            faults.append({"t": t, "kind": "model", "message": str(exc)})
            err = SimulationFault(f"t={t:g} s: {exc}")
            err.report = partial()
            raise err from exc
        except SimulationFault as exc:
            faults.append({"t": t, "kind": "bus", "message": str(exc)})
            exc.report = partial()
            raise

        rec["p_supplied"][k] = supplied
        rec["v_bus"][k] = v
        rec["loss_w"][k] = loss
        rec["p_tilde"][k] = p_tilde
        rec["p_alloc"][k] = alloc
        rec["shortfall"][k] = float(np.sum(mu * (p_pred[k] + p_tilde)) - alloc)
        n_sat[k] = int(sat.sum())
        theta_rec[k] = theta
        soc_rec[k] = state.soc
        temp_rec[k] = state.temp
        mu_rec[k] = mu
        for name, flag in _violations(params, opm, state, refs).items():
            viol[name][k] = flag
        all_saturated = bool(sat.all())

        if k < steps:
            state, clamped = cell.step(params, state, 1.0, refs, dt)
            if np.any(clamped):
                faults.append({"t": t + dt, "kind": "soc_clamp", "message": f"{int(clamped.sum())} cells clamped"})

    return partial()


def _assemble(sc, steps, p_pred, p_act, rec, n_sat, theta_rec, soc_rec, temp_rec, mu_rec, viol, solves, faults):
    from .metrics import metrics

    t = np.arange(steps + 1) * sc.dt
    soc_dev = np.max(np.abs(soc_rec - soc_rec.mean(axis=1, keepdims=True)), axis=1)
    temp_dev = np.max(np.abs(temp_rec - temp_rec.mean(axis=1, keepdims=True)), axis=1)
    report = SimulationReport(
        t=t,
        p_pred=p_pred,
        p_act=p_act,
        p_supplied=rec["p_supplied"],
        v_bus=rec["v_bus"],
        theta=theta_rec,
        loss_w=rec["loss_w"],
        soc=soc_rec,
        temp=temp_rec,
        mu=mu_rec,
        p_tilde=rec["p_tilde"],
        p_alloc=rec["p_alloc"],
        shortfall=rec["shortfall"],
        n_saturated=n_sat,
        socdev_max=soc_dev,
        tempdev_max=temp_dev,
        violations=viol,
        solves=solves,
        faults=faults,
        config=sc.echo,
    )
    report.summary = metrics(report, sc)
    return report


__all__ = ["SimulationReport", "run_closed_loop", "forecast_window", "solve_seed"]
