"""Tempered ensemble Kalman inversion over the policy weights theta.

The virtual observations of every particle are driven to zero: each
iteration rolls the particles out over the horizon, picks a tempering
step ``lam`` (adaptive ESS bisection or a fixed geometric schedule) and
applies the Kalman update

    theta_i <- theta_i + C_ty (C_yy + Gamma / lam)^{-1} (0 - y_i - v_i),

where ``Gamma`` is the block-diagonal observation noise covariance (the
inverse of the per-step ``Q`` weights) and ``v_i ~ N(0, Gamma / lam)``.
For large observation vectors the linear solve runs in ensemble space
(M x M), so no d x d matrix is formed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as la

from .errors import ConfigError, SolverError
from .policy import PolicyParameters, project_simplex
from .problem import obs_weights, rollout

log = logging.getLogger(__name__)

NONFINITE_PENALTY = 1e6
RIDGE = 1e-10
LAMBDA_MODES = ("adaptive", "geometric")


@dataclass(frozen=True)
class EnkiConfig:
    particles: int = 50
    max_iters: int = 20
    seed: int = 0
    lambda_mode: str = "adaptive"
    ess_target: float = 0.5
    geometric_ratio: float = 1.5
    obs_noise: float | None = None  # scalar precision overriding the Q weights
    project_simplex: bool = True
    perturb: bool = True

    def __post_init__(self):
        if self.particles < 2:
            raise ConfigError("need at least 2 particles", "particles")
        if self.max_iters < 1:
            raise ConfigError("must be >= 1", "max_iters")
        if self.lambda_mode not in LAMBDA_MODES:
            raise ConfigError(f"must be one of {LAMBDA_MODES}", "lambda_mode")
        if not 0 < self.ess_target <= 1:
            raise ConfigError("must be in (0, 1]", "ess_target")
        if self.geometric_ratio <= 0:
            raise ConfigError("must be > 0", "geometric_ratio")
        if self.obs_noise is not None and self.obs_noise <= 0:
            raise ConfigError("must be > 0", "obs_noise")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("must be a 64-bit unsigned integer", "seed")


@dataclass
class Ensemble:
    thetas: np.ndarray  # (M, p)
    observations: np.ndarray | None = None  # (M, d) noise-free predictions
    noise: np.ndarray | None = None  # (M, d) perturbations for the innovation
    precision: np.ndarray | None = None  # (d,) observation precision diagonal
    misfits: np.ndarray | None = None  # (M,)
    iteration: int = 0
    lambda_used: float = 0.0

    @property
    def size(self):
        return self.thetas.shape[0]


@dataclass
class ThetaEstimate:
    mean: np.ndarray
    covariance: np.ndarray
    iterations_run: int
    misfit_history: list = field(default_factory=list)
    lambdas: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def lambda_used(self):
        return float(sum(self.lambdas))


def particle_normals(seed, iteration, particles, size):
    """Standard normals keyed by ``(seed, iteration, particle)``.

    Each particle owns a Philox stream whose counter encodes the
    iteration and particle index, so the draws do not depend on the order
    in which particles are processed.
    """
    out = np.empty((particles, size))
    for i in range(particles):
        bitgen = np.random.Philox(key=seed, counter=[0, 0, iteration, i])
        out[i] = np.random.Generator(bitgen).standard_normal(size)
    return out


def init_ensemble(config, theta_nominal, prior_cov, project=None):
    """Draw particles from ``N(theta_nominal, prior_cov)``."""
    prior_cov = np.asarray(prior_cov, dtype=float)
    mean = np.asarray(theta_nominal, dtype=float)
    try:
        chol = np.linalg.cholesky(prior_cov)
    except np.linalg.LinAlgError as exc:
        raise ConfigError("prior covariance is not positive definite", "theta_prior_weight") from exc
    z = particle_normals(config.seed, 0, config.particles, mean.size)
    thetas = mean + z @ chol.T
    if config.project_simplex if project is None else project:
        thetas = project_simplex(thetas)
    return Ensemble(thetas=thetas)


def ensemble_stats(ensemble):
    """Sample means and unbiased covariances of parameters and predictions."""
    th = ensemble.thetas
    y = ensemble.observations
    m = th.shape[0]
    th_mean = th.mean(axis=0)
    y_mean = y.mean(axis=0)
    a_th = th - th_mean
    a_y = y - y_mean
    return (
        th_mean,
        y_mean,
        a_th.T @ a_th / (m - 1),
        a_y.T @ a_y / (m - 1),
        a_th.T @ a_y / (m - 1),
    )


def effective_sample_size(misfits, lam):
    misfits = np.asarray(misfits, dtype=float)
    finite = np.isfinite(misfits)
    if not finite.any():
        return 0.0
    logw = np.where(finite, -lam * (misfits - misfits[finite].min()), -np.inf)
    w = np.exp(logw)
    return float(w.sum() ** 2 / np.square(w).sum())


def select_lambda(ensemble, remaining_budget, config, *, tol=1e-12, max_bisections=200):
    """Largest tempering step whose ESS stays at ``ess_target * M``.

    Accepts an :class:`Ensemble` (its ``misfits``) or a bare misfit array.
    """
    misfits = ensemble.misfits if isinstance(ensemble, Ensemble) else np.asarray(ensemble, dtype=float)
    if not 0 < remaining_budget <= 1 + 1e-12:
        raise ValueError("remaining budget must lie in (0, 1]")
    if not np.isfinite(misfits).any():
        raise SolverError(f"all {misfits.size} particle misfits are non-finite")
    target = config.ess_target * misfits.size
    if effective_sample_size(misfits, remaining_budget) >= target:
        return float(remaining_budget)
    lo, hi = 0.0, float(remaining_budget)
    for _ in range(max_bisections):
        mid = 0.5 * (lo + hi)
        if effective_sample_size(misfits, mid) >= target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * remaining_budget:
            break
    return max(lo, tol * remaining_budget)


def geometric_lambda(iteration, config):
    """Fixed increasing schedule summing to one over ``max_iters`` steps."""
    r, n = config.geometric_ratio, config.max_iters
    if math.isclose(r, 1.0):
        return 1.0 / n
    return r ** (iteration - 1) * (r - 1) / (r**n - 1)


def _inner_factor(w):
    # w is (M, d) or (d, M); factor I + w w^T.
    mat = np.eye(w.shape[0]) + w @ w.T
    try:
        return la.cho_factor(mat), None
    except la.LinAlgError:
        mat[np.diag_indices_from(mat)] += RIDGE
        return la.cho_factor(mat), "ridge added to singular inner system"


def kalman_update(ensemble, lam, config, *, warnings=None, space="auto"):
    """One tempered Kalman step.

    Needs ``observations`` (noise-free predictions) and ``precision``; if
    ``noise`` is present it perturbs the innovation. The inverse is taken
    in ensemble space (M x M) unless ``d < M``, in which case the
    equivalent d x d system is cheaper. ``space`` forces either form.
    """
    if ensemble.observations is None or ensemble.precision is None:
        raise SolverError("ensemble has no observations for this iteration")
    if lam <= 0:
        return replace(ensemble, iteration=ensemble.iteration + 1)
    th, g = ensemble.thetas, ensemble.observations
    m, d = g.shape
    scale = np.sqrt(lam * ensemble.precision)
    a_th = (th - th.mean(axis=0)) / np.sqrt(m - 1)
    wa = (g - g.mean(axis=0)) / np.sqrt(m - 1) * scale  # (M, d)
    innov = -g if ensemble.noise is None else -(g + ensemble.noise)
    z = innov * scale
    if space == "auto":
        space = "observation" if d < m else "ensemble"
    if space == "ensemble":
        factor, warn = _inner_factor(wa)
        delta = (a_th.T @ la.cho_solve(factor, wa @ z.T)).T
    elif space == "observation":
        factor, warn = _inner_factor(wa.T)
        delta = (a_th.T @ wa @ la.cho_solve(factor, z.T)).T
    else:
        raise ValueError(f"unknown space {space!r}")
    if warn:
        log.warning(warn)
        if warnings is not None:
            warnings.append(warn)
    new = th + delta
    if config.project_simplex:
        new = project_simplex(new)
    return replace(
        ensemble,
        thetas=new,
        iteration=ensemble.iteration + 1,
        lambda_used=ensemble.lambda_used + lam,
    )


def kalman_update_direct(ensemble, lam):
    """Reference update forming the d x d innovation covariance (small d only)."""
    _, _, _, c_yy, c_ty = ensemble_stats(ensemble)
    g = ensemble.observations
    innov = -g if ensemble.noise is None else -(g + ensemble.noise)
    s = c_yy + np.diag(1.0 / (lam * ensemble.precision))
    gain = np.linalg.solve(s, c_ty.T).T
    return ensemble.thetas + innov @ gain.T


def _precision(n, forecast, opm_config, config):
    if config.obs_noise is not None:
        return np.full((opm_config.horizon + 1) * (3 + 10 * n + 2), float(config.obs_noise))
    return obs_weights(n, forecast, opm_config)


def solve(
    x_k,
    forecast,
    params,
    opm_config,
    enki_config,
    policy=PolicyParameters(),
    theta_nominal=None,
):
    """Run tempered EnKI and return the posterior mean/covariance of theta.

    ``theta_nominal`` overrides the prior mean (warm starting).
    """
    cfg = enki_config
    nominal = np.asarray(opm_config.theta_nominal if theta_nominal is None else theta_nominal, dtype=float)
    n = np.shape(x_k.soc)[-1]
    ens = init_ensemble(cfg, nominal, opm_config.prior_cov)
    ens.precision = _precision(n, forecast, opm_config, cfg)
    est = ThetaEstimate(mean=nominal, covariance=np.zeros((3, 3)), iterations_run=0)
    for it in range(1, cfg.max_iters + 1):
        ro = rollout(x_k, ens.thetas, forecast, params, opm_config, policy)
        g = ro.observations
        bad = ~np.isfinite(g)
        if bad.any():
            g = np.where(bad, NONFINITE_PENALTY, g)
        ens.observations = g
        ens.misfits = 0.5 * np.sum(ens.precision * g**2, axis=1)
        remaining = 1.0 - ens.lambda_used
        if it == cfg.max_iters:
            lam = remaining
        elif cfg.lambda_mode == "adaptive":
            lam = select_lambda(ens, remaining, cfg)
        else:
            lam = min(geometric_lambda(it, cfg), remaining)
        if cfg.perturb:
            z = particle_normals(cfg.seed, it, cfg.particles, g.shape[1])
            ens.noise = z / np.sqrt(lam * ens.precision)
        else:
            ens.noise = None
        est.misfit_history.append(float(np.median(ens.misfits)))
        est.lambdas.append(float(lam))
        ens = kalman_update(ens, lam, cfg, warnings=est.warnings)
        est.iterations_run = it
        if ens.lambda_used >= 1.0 - 1e-12:
            break
    mean = ens.thetas.mean(axis=0)
    est.mean = project_simplex(mean) if cfg.project_simplex else mean
    a = ens.thetas - ens.thetas.mean(axis=0)
    est.covariance = a.T @ a / (ens.size - 1)
    return est


__all__ = [
    "EnkiConfig",
    "Ensemble",
    "ThetaEstimate",
    "particle_normals",
    "init_ensemble",
    "ensemble_stats",
    "effective_sample_size",
    "select_lambda",
    "geometric_lambda",
    "kalman_update",
    "kalman_update_direct",
    "solve",
]
