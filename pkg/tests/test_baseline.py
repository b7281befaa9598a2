import numpy as np
import pytest

from bess_opm.baseline import (
    CellLevelProblem,
    SolverOptions,
    grid_oracle,
    simplex_grid,
    solve_cell_level,
)
from bess_opm.cell import CellState, PackParameters
from bess_opm.errors import ConfigError
from bess_opm.problem import OpmConfig, mhe_cost

from conftest import make_pack


def fd_gradient(prob, x, args, h=1e-6):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (prob.merit(x + e, *args)[0] - prob.merit(x - e, *args)[0]) / (2 * h)
    return g


def test_gradient_matches_central_differences():
    worst = 0.0
    for k in range(100):
        rng = np.random.default_rng(k)
        n, h = int(rng.integers(2, 6)), int(rng.integers(1, 4))
        params, state = make_pack(n, seed=k, soc=(0.6, 0.8), temp=(298, 300))
        fc = rng.uniform(-15, 15, h + 1) * n
        prob = CellLevelProblem(state, fc, params, OpmConfig(horizon=h))
        x = rng.uniform(0, 2.0 / n, n * (h + 1))
        nu = rng.uniform(0, 1, (h + 1, prob.n_ineq))
        kappa = rng.normal(size=h + 1)
        args = (nu, kappa, float(rng.uniform(1, 100)))
        _, grad = prob.merit(x, *args)
        fd = fd_gradient(prob, x, args)
        worst = max(worst, np.linalg.norm(grad - fd) / np.linalg.norm(fd))
    assert worst <= 1e-5


def test_feasible_instance_converges():
    rng = np.random.default_rng(1)
    n, h = 10, 4
    params = PackParameters(n=n, res_base=rng.uniform(0.0313, 0.0413, n))
    state = CellState(rng.uniform(0.72, 0.725, n), np.full(n, 298.0))
    res = solve_cell_level(state, np.full(h + 1, 100.0), params, OpmConfig(horizon=h))
    assert res.status == "converged"
    assert res.max_violation <= 1e-6
    assert res.mu.shape == (h + 1, n)
    # supply-demand equality: sum(mu) = 1 + L/P at every step
    prob = CellLevelProblem(state, np.full(h + 1, 100.0), params, OpmConfig(horizon=h))
    q, t = prob.forward(res.mu)
    _, e, loss = prob.constraints(res.mu, q, t)
    np.testing.assert_allclose(res.mu.sum(axis=1), 1 + loss / 100.0, atol=1e-6)


def test_baseline_beats_uniform_split():
    rng = np.random.default_rng(2)
    n, h = 6, 3
    params = PackParameters(n=n, res_base=rng.uniform(0.02, 0.08, n))
    state = CellState(np.full(n, 0.7), np.full(n, 298.0))
    fc = np.full(h + 1, 60.0)
    res = solve_cell_level(state, fc, params, OpmConfig(horizon=h, soc_band=0.05, temp_band=5.0))
    prob = CellLevelProblem(state, fc, params, OpmConfig(horizon=h))
    mu0 = np.full((h + 1, n), 1.0 / n)
    q, t = prob.forward(mu0)
    _, _, loss0 = prob.constraints(mu0, q, t)
    assert res.cost < loss0.sum()


def test_infeasible_start_reports_status():
    params, state = make_pack(5, seed=3, soc=(0.6, 0.8))
    res = solve_cell_level(state, np.full(3, 50.0), params, OpmConfig(horizon=2), SolverOptions(max_outer=4))
    assert res.status in ("infeasible", "max_iter")
    assert np.all(np.isfinite(res.mu))


def test_size_guard():
    params, state = make_pack(2001)
    with pytest.raises(ConfigError):
        CellLevelProblem(state, np.full(6, 1.0), params, OpmConfig(horizon=5))


class TestGrid:
    @pytest.mark.parametrize("step, count", [(0.5, 6), (0.25, 15), (0.01, 5151)])
    def test_counts(self, step, count):
        g = simplex_grid(step)
        assert len(g) == count
        np.testing.assert_allclose(g.sum(axis=1), 1.0)

    def test_bad_step(self):
        with pytest.raises(ValueError):
            simplex_grid(0.3)

    def test_identical_cells_barycenter_in_minimizers(self):
        params = PackParameters(n=3)
        state = CellState(np.full(3, 0.7), np.full(3, 298.0))
        cfg = OpmConfig(horizon=2)
        fc = np.full(3, 30.0)
        grid = simplex_grid(0.05)
        costs = mhe_cost(grid, state, fc, params, cfg)
        # identical features: the data part is flat, the prior picks the barycenter
        best = grid[np.argmin(costs)]
        assert np.allclose(best, 1 / 3, atol=0.05)
        bary = mhe_cost(np.full(3, 1 / 3), state, fc, params, cfg)
        assert bary <= costs.min() + 1e-12
        th, c = grid_oracle(state, fc, params, cfg, 0.05)
        assert c == pytest.approx(costs.min())
