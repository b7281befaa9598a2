"""Cell-level NMPC solved directly, plus the exhaustive simplex-grid oracle.

The direct transcription keeps one PSR per cell and step, ``mu[t, j]`` for
``t = 0..H``, eliminates the states by single shooting (forward Euler),
and handles every constraint with a PHR augmented Lagrangian whose inner
problems are solved by L-BFGS-B using an adjoint gradient. Constraints on
the given initial state do not depend on the decision variables and are
left out of the program.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import ConfigError
from .policy import PolicyParameters
from .problem import mhe_cost

MAX_CELL_STEPS = 10_000


@dataclass(frozen=True)
class SolverOptions:
    max_outer: int = 30
    max_inner: int = 500
    gtol: float = 1e-6
    ctol: float = 1e-6
    rho0: float = 10.0
    rho_growth: float = 10.0
    rho_max: float = 1e8
    mu_upper: float = 2.0


@dataclass
class CellLevelResult:
    mu: np.ndarray  # (H+1, n)
    cost: float  # sum of step losses in watts
    runtime: float
    status: str
    outer_iterations: int = 0
    evaluations: int = 0
    max_violation: float = np.inf
    grad_norm: float = np.inf
    n_variables: int = 0
    history: list = field(default_factory=list)


class CellLevelProblem:
    """Single-shooting transcription with an augmented-Lagrangian merit."""

    def __init__(self, x_k, forecast, params, opm_config):
        self.q0 = np.asarray(x_k.soc, dtype=float)
        self.t0 = np.asarray(x_k.temp, dtype=float)
        self.n = self.q0.size
        self.forecast = np.asarray(forecast, dtype=float)
        self.steps = self.forecast.size
        if self.n * (self.steps - 1) > MAX_CELL_STEPS:
            raise ConfigError(f"n*H = {self.n * (self.steps - 1)} exceeds the dense-solve guard {MAX_CELL_STEPS}")
        self.params = params
        self.cfg = opm_config
        self.dt = opm_config.dt
        self.coef = np.asarray(params.ocv_coeffs, dtype=float)
        self.dcoef = np.polynomial.polynomial.polyder(self.coef)
        self.qc = np.broadcast_to(params.capacity_coulomb, (self.n,))
        self.p_abs = np.maximum(np.abs(self.forecast), opm_config.p_floor)
        self.has_eq = np.abs(self.forecast) >= opm_config.p_floor
        self.obj_scale = float(self.p_abs.max())
        # residual scales per class: T bounds, q bounds, current, q band, T band
        self.scales = (opm_config.temp_band, opm_config.soc_band, 1.0 / self.n, opm_config.soc_band, opm_config.temp_band)
        self.n_ineq = 10 * self.n
        self.evaluations = 0

    # -- model pieces ---------------------------------------------------
    def _ocv(self, q):
        pp = np.polynomial.polynomial
        return pp.polyval(q, self.coef), pp.polyval(q, self.dcoef)

    def _res(self, q):
        p = self.params
        e = p.res_exp_coeff * np.exp(-p.res_exp_rate * q)
        return p.res_base + e, -p.res_exp_rate * e

    def forward(self, mu):
        """States and stage quantities for ``mu`` of shape (steps, n)."""
        p = self.params
        n, steps, dt = self.n, self.steps, self.dt
        q = np.empty((steps, n))
        temp = np.empty((steps, n))
        q[0], temp[0] = self.q0, self.t0
        for t in range(steps - 1):
            qt = np.clip(q[t], 0.0, 1.0)
            u, _ = self._ocv(qt)
            r, _ = self._res(qt)
            pw = mu[t] * self.forecast[t]
            q[t + 1] = q[t] - pw * dt / (self.qc * u)
            temp[t + 1] = temp[t] + dt / p.heat_capacity * (
                r * (pw / u) ** 2 - (temp[t] - p.env_temp) / p.conv_resistance
            )
        return q, temp

    def constraints(self, mu, q, temp):
        """Scaled inequality residuals (steps, 10n) and equality residuals (steps,)."""
        p, cfg = self.params, self.cfg
        sT, sq, si, sqb, sTb = self.scales
        qc = np.clip(q, 0.0, 1.0)
        u, _ = self._ocv(qc)
        r, _ = self._res(qc)
        pabs = self.p_abs[:, None]
        b = (r + p.converter_res) * self.forecast[:, None] ** 2 / u**2
        loss = np.sum(b * mu**2, axis=1)
        qd = q - q.mean(axis=1, keepdims=True)
        td = temp - temp.mean(axis=1, keepdims=True)
        g = np.concatenate(
            [
                (p.temp_limits[0] - temp) / sT,
                (temp - p.temp_limits[1]) / sT,
                (p.soc_limits[0] - q) / sq,
                (q - p.soc_limits[1]) / sq,
                (u * p.current_limits[0] / pabs - mu) / si,
                (mu - u * p.current_limits[1] / pabs) / si,
                (-qd - cfg.soc_band) / sqb,
                (qd - cfg.soc_band) / sqb,
                (-td - cfg.temp_band) / sTb,
                (td - cfg.temp_band) / sTb,
            ],
            axis=1,
        )
        e = np.where(self.has_eq, mu.sum(axis=1) - 1.0 - loss / self.p_abs, 0.0)
        return g, e, loss

    def _active_mask(self):
        # State-only residuals at t = 0 are constants of the program.
        mask = np.ones((self.steps, self.n_ineq), dtype=bool)
        n = self.n
        state_cols = np.r_[0 : 4 * n, 6 * n : 10 * n]
        mask[0, state_cols] = False
        return mask

    # -- merit and adjoint gradient ----------------------------------------
    def merit(self, x, nu, kappa, rho):
        """Augmented-Lagrangian value and its gradient w.r.t. the flat ``mu``."""
        self.evaluations += 1
        p = self.params
        n, steps, dt = self.n, self.steps, self.dt
        mu = x.reshape(steps, n)
        q, temp = self.forward(mu)
        g, e, loss = self.constraints(mu, q, temp)
        mask = self._active_mask()
        m = np.where(mask, np.maximum(0.0, nu + rho * g), 0.0)
        val = loss.sum() / self.obj_scale
        val += np.sum(np.where(mask, m**2 - nu**2, 0.0)) / (2 * rho)
        val += np.sum(kappa * e + 0.5 * rho * e**2)
        k = np.where(self.has_eq, kappa + rho * e, 0.0)

        sT, sq, si, sqb, sTb = self.scales
        qc = np.clip(q, 0.0, 1.0)
        u, du = self._ocv(qc)
        r, dr = self._res(qc)
        P = self.forecast[:, None]
        pabs = self.p_abs[:, None]
        rt = r + p.converter_res
        b = rt * P**2 / u**2
        dL_dmu = 2 * b * mu
        dL_dq = mu**2 * P**2 * (dr / u**2 - 2 * rt * du / u**3)
        blocks = [m[:, i * n : (i + 1) * n] for i in range(10)]
        Tlo, Thi, qlo, qhi, ilo, ihi, qblo, qbhi, Tblo, Tbhi = blocks
        il, ih = p.current_limits
        kk = k[:, None]

        c_mu = dL_dmu / self.obj_scale + (ihi - ilo) / si + kk * (1.0 - dL_dmu / pabs)
        c_q = (
            dL_dq / self.obj_scale
            + (qhi - qlo) / sq
            + (ilo * du * il - ihi * du * ih) / (pabs * si)
            - kk * dL_dq / pabs
        )
        a = (qbhi - qblo) / sqb
        c_q = c_q + a - a.mean(axis=1, keepdims=True)
        c_T = (Thi - Tlo) / sT
        bb = (Tbhi - Tblo) / sTb
        c_T = c_T + bb - bb.mean(axis=1, keepdims=True)

        grad = np.empty((steps, n))
        lam_q = c_q[-1].copy()
        lam_T = c_T[-1].copy()
        grad[-1] = c_mu[-1]
        decay = 1.0 - dt / (p.heat_capacity * p.conv_resistance)
        for t in range(steps - 2, -1, -1):
            Pt = self.forecast[t]
            ut, dut, rtq, drt = u[t], du[t], r[t], dr[t]
            mt = mu[t]
            dq_dq = 1.0 + mt * Pt * dt * dut / (self.qc * ut**2)
            dq_dmu = -Pt * dt / (self.qc * ut)
            dT_dq = dt / p.heat_capacity * mt**2 * Pt**2 * (drt / ut**2 - 2 * rtq * dut / ut**3)
            dT_dmu = dt / p.heat_capacity * 2 * rtq * mt * Pt**2 / ut**2
            grad[t] = c_mu[t] + lam_q * dq_dmu + lam_T * dT_dmu
            lam_q, lam_T = (
                c_q[t] + lam_q * dq_dq + lam_T * dT_dq,
                c_T[t] + lam_T * decay,
            )
        return val, grad.ravel()

    def violation(self, mu):
        q, temp = self.forward(mu)
        g, e, _ = self.constraints(mu, q, temp)
        g = np.where(self._active_mask(), g, -np.inf)
        return max(float(np.max(g, initial=0.0)), float(np.max(np.abs(e), initial=0.0)))


def _projected_grad_norm(x, grad, lo, hi):
    pg = np.where((x <= lo) & (grad > 0), 0.0, grad)
    pg = np.where((x >= hi) & (pg < 0), 0.0, pg)
    return float(np.linalg.norm(pg, np.inf))


def solve_cell_level(x_k, forecast, params, opm_config, solver_opts=SolverOptions(), mu0=None):
    """Locally optimal per-cell PSR trajectory for the unparameterized problem."""
    start = time.perf_counter()
    prob = CellLevelProblem(x_k, forecast, params, opm_config)
    opts = solver_opts
    shape = (prob.steps, prob.n)
    x = np.full(prob.n * prob.steps, 1.0 / prob.n) if mu0 is None else np.asarray(mu0, float).ravel().copy()
    bounds = [(0.0, opts.mu_upper)] * x.size
    nu = np.zeros((prob.steps, prob.n_ineq))
    kappa = np.zeros(prob.steps)
    rho = opts.rho0
    status = "max_iter"
    prev_viol = np.inf
    history = []
    gnorm = np.inf
    outer = 0
    for outer in range(1, opts.max_outer + 1):
        res = minimize(
            prob.merit,
            x,
            args=(nu, kappa, rho),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": opts.max_inner, "gtol": opts.gtol, "ftol": 1e-15},
        )
        x = res.x
        mu = x.reshape(shape)
        qs, ts = prob.forward(mu)
        g, e, _ = prob.constraints(mu, qs, ts)
        mask = prob._active_mask()
        nu = np.where(mask, np.maximum(0.0, nu + rho * g), 0.0)
        kappa = np.where(prob.has_eq, kappa + rho * e, 0.0)
        viol = prob.violation(mu)
        _, grad = prob.merit(x, nu, kappa, rho)
        gnorm = _projected_grad_norm(x, grad, 0.0, opts.mu_upper)
        history.append({"outer": outer, "violation": viol, "rho": rho, "inner": int(res.nit)})
        if viol <= opts.ctol and gnorm <= max(opts.gtol * 100, 1e-4):
            status = "converged"
            break
        if viol > 0.25 * prev_viol:
            if rho >= opts.rho_max:
                status = "infeasible"
                break
            rho = min(rho * opts.rho_growth, opts.rho_max)
        prev_viol = viol
    mu = x.reshape(shape)
    qs, ts = prob.forward(mu)
    _, _, loss = prob.constraints(mu, qs, ts)
    return CellLevelResult(
        mu=mu,
        cost=float(loss.sum()),
        runtime=time.perf_counter() - start,
        status=status,
        outer_iterations=outer,
        evaluations=prob.evaluations,
        max_violation=prob.violation(mu),
        grad_norm=gnorm,
        n_variables=x.size,
        history=history,
    )


def simplex_grid(step):
    """All points of the 2-simplex whose coordinates are multiples of ``step``."""
    k = int(round(1.0 / step))
    if k < 1 or not np.isclose(k * step, 1.0):
        raise ValueError("step must divide 1")
    i, j = np.meshgrid(np.arange(k + 1), np.arange(k + 1), indexing="ij")
    keep = i + j <= k
    i, j = i[keep], j[keep]
    return np.stack([i, j, k - i - j], axis=1) / k


def grid_oracle(x_k, forecast, params, opm_config, step=0.01, policy=PolicyParameters(), theta_nominal=None, chunk=2048):
    """Brute-force minimizer of the MHE cost over the discretized simplex."""
    grid = simplex_grid(step)
    costs = np.concatenate(
        [
            mhe_cost(grid[s : s + chunk], x_k, forecast, params, opm_config, policy, theta_nominal)
            for s in range(0, len(grid), chunk)
        ]
    )
    best = int(np.argmin(costs))
    return grid[best], float(costs[best])


__all__ = [
    "SolverOptions",
    "CellLevelResult",
    "CellLevelProblem",
    "solve_cell_level",
    "simplex_grid",
    "grid_oracle",
]
