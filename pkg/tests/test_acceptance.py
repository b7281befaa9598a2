"""End-to-end acceptance checks, one test per criterion.

Each test logs a single PASS/FAIL line, collected in the terminal summary.
"""

import numpy as np
import pytest
from scipy import stats

from bess_opm import cell, enki, problem
from bess_opm.baseline import CellLevelProblem, grid_oracle
from bess_opm.cell import CellState, PackParameters
from bess_opm.enki import Ensemble, EnkiConfig
from bess_opm.policy import features, psr
from bess_opm.problem import OpmConfig, mhe_cost, rollout
from bess_opm.sim import load_bundled, run_closed_loop, scenario_from_dict
from bess_opm.sim.compare import compare

from conftest import ACCEPTANCE, make_pack
from test_baseline import fd_gradient
from test_enki import random_ensemble

SIZES_1 = [(50, 5), (50, 10), (100, 5), (100, 10)]


def verdict(num, ok, detail):
    line = f"criterion {num}: {'PASS' if ok else 'FAIL'} | {detail}"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def timings():
    rows = compare([50, 100], [5, 10], [50], repeats=3) + compare([200], [10], [50], repeats=3)
    return {(r.n, r.horizon): r for r in rows}


def small_scenario(s):
    rng = np.random.default_rng([7, s])
    n, h = int(rng.integers(2, 5)), int(rng.integers(1, 4))
    params = PackParameters(n=n, res_base=rng.uniform(0.0313, 0.0413, n))
    # spread SoC so the data terms dominate the prior
    state = CellState(rng.permutation(np.linspace(0.62, 0.80, n)), rng.uniform(298.0, 301.0, n))
    p = float(rng.choice([-1, 1]) * rng.uniform(5, 15) * n)
    return params, state, np.full(h + 1, p), OpmConfig(horizon=h)


def test_runtime_reduction(timings):
    parts = [f"(n={n},H={h}) {timings[n, h].reduction_pct:.2f}%" for n, h in SIZES_1]
    ok = all(
        timings[n, h].reduction_pct is not None and timings[n, h].reduction_pct >= 90.0 for n, h in SIZES_1
    )
    verdict(1, ok, "EnKI reduction vs cell-level at M=50: " + ", ".join(parts))


def test_scaling_shape(timings):
    small, large = timings[50, 10], timings[200, 10]
    r_enki = large.enki_s / small.enki_s
    r_base = large.baseline_s / small.baseline_s
    ok = r_enki <= 10.0 and r_base > r_enki
    verdict(2, ok, f"n 50->200 at H=10, M=50: EnKI ratio {r_enki:.2f}, cell-level ratio {r_base:.2f}")


def test_balancing_desk_scale():
    sc = load_bundled("desk20")
    rep = run_closed_loop(sc)
    band = sc.opm.soc_band
    below = np.flatnonzero(rep.socdev_max <= band)
    first = float(rep.t[below[0]]) if below.size else None
    # the demand sign flip perturbs the balance for one minute
    switch = np.zeros_like(rep.t, dtype=bool)
    for ts in np.arange(sc.demand.switch_period, sc.duration, sc.demand.switch_period):
        switch |= (rep.t >= ts) & (rep.t < ts + 60.0)
    after = rep.socdev_max[(rep.t >= (first if first is not None else np.inf)) & ~switch]
    post = float(after.max()) if after.size else np.inf
    tmax = float(rep.tempdev_max.max())
    ok = first is not None and first <= 600.0 and post <= band + 0.001 and tmax <= sc.opm.temp_band + 0.1
    verdict(
        3,
        ok,
        f"n=20: below {band} at t={first} s, max after {post:.5f}, max temperature deviation {tmax:.3f} K",
    )


def test_oracle_equivalence():
    ratios = []
    for s in range(10):
        params, state, fc, cfg = small_scenario(s)
        _, best = grid_oracle(state, fc, params, cfg, 0.01)
        est = enki.solve(state, fc, params, cfg, EnkiConfig(seed=s))
        ratios.append(mhe_cost(est.mean, state, fc, params, cfg) / best)
    ok = max(ratios) <= 1.05
    verdict(4, ok, f"10 scenarios, worst cost(EnKI)/cost(grid) = {max(ratios):.4f}")


def test_cost_log_posterior_identity():
    worst = 0.0
    for s in range(10):
        params, state, fc, cfg = small_scenario(s)
        w = problem.obs_weights(params.n, fc, cfg)
        prior_cov = np.linalg.inv(2 * cfg.theta_prior_weight)

        def log_post(th):
            y = rollout(state, th, fc, params, cfg).observations
            lik = stats.norm.logpdf(0.0, loc=y, scale=np.sqrt(1 / (2 * w))).sum()
            return lik + stats.multivariate_normal.logpdf(th, mean=cfg.theta_nominal, cov=prior_cov)

        rng = np.random.default_rng([5, s])
        for _ in range(100):
            ta, tb = rng.dirichlet(np.ones(3), size=2)
            ca, cb = mhe_cost(ta, state, fc, params, cfg), mhe_cost(tb, state, fc, params, cfg)
            gap = abs((ca - cb) + (log_post(ta) - log_post(tb))) / max(abs(ca), abs(cb), 1.0)
            worst = max(worst, gap)
    verdict(5, worst <= 1e-8, f"1000 pairs, worst relative gap {worst:.2e}")


def test_conjugate_gaussian():
    m = 10_000
    rng = np.random.default_rng(2024)
    th = rng.normal(size=(m, 1))
    ens = Ensemble(thetas=th, observations=th - 1.0, precision=np.ones(1), noise=rng.normal(size=(m, 1)))
    out = enki.kalman_update(ens, 1.0, EnkiConfig(project_simplex=False)).thetas
    mean, var = float(out.mean()), float(out.var(ddof=1))
    ok = abs(mean - 0.5) <= 0.05 and abs(var - 0.5) <= 0.05
    verdict(6, ok, f"M=1e4, posterior mean {mean:.4f}, variance {var:.4f}")


def test_psr_identical_cells():
    worst_solve, worst_sum, checked = 0.0, 0.0, 0
    for n in (2, 5, 20):
        sc = scenario_from_dict(
            {
                "n": n,
                "duration": 300,
                "opm_period": 30,
                "initial": {"soc": 0.72, "temp": 299.0, "res_base": 0.035},
                "demand": {"nominal": 10.0 * n, "switch_period": 150, "noise": n},
            }
        )
        rep = run_closed_loop(sc)
        at_solve = np.isin(rep.t, [s["t"] for s in rep.solves])
        checked += int(at_solve.sum())
        worst_solve = max(worst_solve, float(np.abs(rep.mu[at_solve] - 1.0 / n).max()))
        worst_sum = max(worst_sum, float(np.abs(rep.mu.sum(axis=1) - 1.0).max()))
    ok = worst_solve <= 1e-3 and worst_sum <= 1e-9 and checked > 0
    verdict(7, ok, f"{checked} solves, max |mu-1/n| {worst_solve:.1e}, max |sum mu - 1| {worst_sum:.1e}")


def test_demand_step():
    sc = load_bundled("demand_step")
    rep = run_closed_loop(sc)
    v_ref = sc.lowlevel.v_ref
    stops = sorted(t for t, _ in sc.demand.events)
    worst_p, worst_v = 0.0, 0.0
    for t0, target in sc.demand.events:
        if target != 120.0:
            continue
        t1 = next((t for t in stops if t > t0), sc.duration)
        win = (rep.t >= t0 + 5.0) & (rep.t < t1)
        worst_p = max(worst_p, float(np.abs(rep.p_supplied[win] - 120.0).max()))
        worst_v = max(worst_v, float(np.abs(rep.v_bus[win] - v_ref).max() / v_ref))
    clamps = int(rep.violations["current_bounds"].sum())
    ok = worst_p <= 0.5 and worst_v <= 1e-3 and clamps == 0
    verdict(
        8,
        ok,
        f"from 5 s after each 90->120 W step: max |P-120| {worst_p:.3f} W, "
        f"max bus error {100 * worst_v:.4f}%, clamp violations {clamps}",
    )


def test_numerical_hygiene():
    grad_worst = 0.0
    for k in range(100):
        rng = np.random.default_rng([9, k])
        n, h = int(rng.integers(2, 6)), int(rng.integers(1, 4))
        params, state = make_pack(n, seed=k, soc=(0.6, 0.8), temp=(298, 300))
        fc = rng.uniform(-15, 15, h + 1) * n
        prob = CellLevelProblem(state, fc, params, OpmConfig(horizon=h))
        x = rng.uniform(0, 2.0 / n, n * (h + 1))
        args = (rng.uniform(0, 1, (h + 1, prob.n_ineq)), rng.normal(size=h + 1), float(rng.uniform(1, 100)))
        fd = fd_gradient(prob, x, args)
        grad_worst = max(grad_worst, np.linalg.norm(prob.merit(x, *args)[1] - fd) / np.linalg.norm(fd))

    upd_worst = 0.0
    cfg = EnkiConfig(project_simplex=False)
    for seed, d in enumerate((5, 20, 50)):
        ens = random_ensemble(m=30, d=d, seed=seed)
        for lam in (1e-3, 0.3, 1.0):
            slow = enki.kalman_update_direct(ens, lam)
            for space in ("ensemble", "observation"):
                fast = enki.kalman_update(ens, lam, cfg, space=space).thetas
                upd_worst = max(upd_worst, float(np.abs(fast - slow).max() / np.abs(slow).max()))

    params = cell.CellParameters()

    def integrate(dt):
        s = CellState(0.8, 298.0)
        for _ in range(int(round(1200.0 / dt))):
            s, _ = cell.step(params, s, 1.0, 15.0, dt)
        return s.temp

    ref = integrate(1.2)
    errs = [abs(integrate(dt) - ref) for dt in (120.0, 60.0, 30.0)]
    orders = [np.log2(errs[0] / errs[1]), np.log2(errs[1] / errs[2])]
    euler_ok = all(0.8 <= p <= 1.2 for p in orders)

    ok = grad_worst <= 1e-5 and upd_worst <= 1e-8 and euler_ok
    verdict(
        9,
        ok,
        f"gradient rel err {grad_worst:.1e}, Kalman update rel err {upd_worst:.1e}, "
        f"Euler observed order {orders[0]:.2f}/{orders[1]:.2f}",
    )


def test_psr_of_identical_state_is_uniform():
    # companion to criterion 7 at the policy level, for arbitrary theta
    params = PackParameters(n=7)
    state = CellState(np.full(7, 0.4), np.full(7, 305.0))
    for th in np.random.default_rng(0).dirichlet(np.ones(3), size=20):
        np.testing.assert_allclose(psr(features(state, params, -30.0), th), 1 / 7, atol=1e-12)
