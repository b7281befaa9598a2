"""Loss, constraints, barrier penalties and the virtual observation map.

The virtual observation at one step is the concatenation

    [ sqrt(Phi^T B Phi) theta | psi_g(g) | psi_e(e) ]

of length ``3 + 10 n + 2``; a horizon rollout stacks ``H + 1`` of them.
Inequality residuals are ordered by class

    temperature bounds, SoC bounds, current bounds, SoC band, temperature band

and, inside each class, the n lower-side residuals precede the n
upper-side residuals (cells inner-most). A residual is ``<= 0`` iff the
constraint holds. Equality residuals are ``[1^T theta - 1,
1^T Phi theta - 1 - L/|P|]``.

Everything broadcasts over a leading batch axis (particles or grid points).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import cell
from .cell import CellState
from .errors import ConfigError
from .policy import PolicyParameters, features, psr

INEQ_CLASSES = ("temp_bounds", "soc_bounds", "current_bounds", "soc_band", "temp_band")
EQ_NAMES = ("simplex", "supply_demand")
SIDES = ("lower", "upper")
SOC_FEATURE_FLOOR = 1e-9


@dataclass(frozen=True)
class BarrierParams:
    alpha: float
    beta: float
    smooth: bool = False


def _as_weight_matrix(value, name):
    w = np.asarray(value, dtype=float)
    if w.ndim == 0:
        w = w * np.eye(3)
    elif w.ndim == 1:
        w = np.diag(w)
    if w.shape != (3, 3):
        raise ConfigError("expected scalar, 3-vector or 3x3 matrix", name)
    if not np.allclose(w, w.T):
        raise ConfigError("must be symmetric", name)
    if np.linalg.eigvalsh(w).min() <= 0:
        raise ConfigError("must be positive definite", name)
    return w


@dataclass(frozen=True)
class OpmConfig:
    """Horizon, balancing bands, prior and observation weights, barriers.

    ``q_loss`` may be ``"auto"`` (weight ``1/max(|P_t|, p_floor)^2`` on the
    loss block of step t) or a positive number. ``q_pen`` weighs every
    penalty entry.
    """

    horizon: int = 10
    dt: float = 1.0
    soc_band: float = 0.005
    temp_band: float = 1.0
    theta_nominal: tuple = (1 / 3, 1 / 3, 1 / 3)
    theta_prior_weight: object = 25.0
    q_loss: object = "auto"
    q_pen: float = 1.0
    barrier_g: BarrierParams = field(default_factory=lambda: BarrierParams(1.0, 50.0))
    barrier_e: BarrierParams = field(default_factory=lambda: BarrierParams(1.0, 2.0))
    p_floor: float = 1.0

    def __post_init__(self):
        if int(self.horizon) != self.horizon or self.horizon < 0:
            raise ConfigError("must be a non-negative integer", "horizon")
        if self.dt <= 0:
            raise ConfigError("must be > 0", "dt")
        if self.soc_band <= 0 or self.temp_band <= 0:
            raise ConfigError("bands must be > 0", "soc_band")
        if len(self.theta_nominal) != 3:
            raise ConfigError("needs 3 components", "theta_nominal")
        object.__setattr__(
            self, "theta_prior_weight", _as_weight_matrix(self.theta_prior_weight, "theta_prior_weight")
        )
        if self.q_loss != "auto" and not float(self.q_loss) > 0:
            raise ConfigError("must be 'auto' or > 0", "q_loss")
        if self.q_pen <= 0:
            raise ConfigError("must be > 0", "q_pen")
        if self.barrier_g.alpha <= 0 or self.barrier_g.beta <= 0:
            raise ConfigError("alpha and beta must be > 0", "barrier_g")
        be = self.barrier_e.beta
        if self.barrier_e.alpha <= 0 or be <= 0 or int(be) != be or int(be) % 2:
            raise ConfigError("beta must be an even positive integer", "barrier_e.beta")
        if self.p_floor <= 0:
            raise ConfigError("must be > 0", "p_floor")

    @property
    def prior_cov(self):
        return np.linalg.inv(self.theta_prior_weight)


def step_size(n):
    """Length of one per-step virtual observation."""
    return 3 + 10 * n + 2


class ObservationLayout:
    """Bijective map between offsets of a stacked observation and entries."""

    def __init__(self, n, horizon):
        self.n = n
        self.horizon = horizon
        self.per_step = step_size(n)
        self.size = (horizon + 1) * self.per_step

    def offset(self, step, block, name=None, side=None, cell=None, index=None):
        base = step * self.per_step
        if block == "loss":
            return base + index
        if block == "ineq":
            k = INEQ_CLASSES.index(name)
            return base + 3 + k * 2 * self.n + SIDES.index(side) * self.n + cell
        if block == "eq":
            return base + 3 + 10 * self.n + EQ_NAMES.index(name)
        raise KeyError(block)

    def locate(self, offset):
        if not 0 <= offset < self.size:
            raise IndexError(offset)
        step, r = divmod(offset, self.per_step)
        if r < 3:
            return {"step": step, "block": "loss", "index": r}
        r -= 3
        if r < 10 * self.n:
            k, r = divmod(r, 2 * self.n)
            side, c = divmod(r, self.n)
            return {"step": step, "block": "ineq", "name": INEQ_CLASSES[k], "side": SIDES[side], "cell": c}
        return {"step": step, "block": "eq", "name": EQ_NAMES[r - 10 * self.n]}


class VirtualObservation(NamedTuple):
    loss_block: np.ndarray  # (..., 3)
    ineq_block: np.ndarray  # (..., 10n)
    eq_block: np.ndarray  # (..., 2)

    def vector(self):
        return np.concatenate([self.loss_block, self.ineq_block, self.eq_block], axis=-1)


def loss_diag(state, params, p_out):
    """Diagonal of B: ``(R_j + R_C) P^2 / Z_j^2``."""
    u = cell.ocv(params, state.soc)
    r = cell.resistance(params, state.soc)
    return (r + params.converter_res) * np.square(p_out) / u**2


def total_loss(theta, feat, bdiag):
    mu = psr(feat, theta)
    return np.sum(bdiag * mu**2, axis=-1)


def barrier_g(x, alpha, beta, smooth=False):
    """Soft inequality barrier: zero on the feasible side, softplus beyond."""
    x = np.asarray(x, dtype=float)
    sp = np.logaddexp(0.0, beta * x) / alpha
    if smooth:
        return sp
    return np.where(x > 0, sp, 0.0)


def barrier_e(x, alpha, beta):
    beta = int(beta)
    if beta <= 0 or beta % 2:
        raise ConfigError("beta_e must be an even positive integer", "barrier_e.beta")
    return np.asarray(x, dtype=float) ** beta / alpha


def _floored(p_out, p_floor):
    return max(abs(float(p_out)), p_floor)


def inequality_residuals(state, theta, feat, params, p_out, config):
    """Stacked residuals, shape ``(..., 10 n)``; see module docstring for order."""
    q = np.asarray(state.soc, dtype=float)
    temp = np.asarray(state.temp, dtype=float)
    mu = psr(feat, theta)
    u = cell.ocv(params, q)
    p_abs = _floored(p_out, config.p_floor)
    t_lo, t_hi = params.temp_limits
    q_lo, q_hi = params.soc_limits
    i_lo, i_hi = params.current_limits
    q_dev = q - q.mean(axis=-1, keepdims=True)
    t_dev = temp - temp.mean(axis=-1, keepdims=True)
    mu, temp, q, u = np.broadcast_arrays(mu, temp, q, u)
    parts = [
        t_lo - temp,
        temp - t_hi,
        q_lo - q,
        q - q_hi,
        u * i_lo / p_abs - mu,
        mu - u * i_hi / p_abs,
        -q_dev - config.soc_band,
        q_dev - config.soc_band,
        -t_dev - config.temp_band,
        t_dev - config.temp_band,
    ]
    return np.concatenate(np.broadcast_arrays(*parts), axis=-1)


def equality_residuals(theta, feat, bdiag, p_out, p_floor=1.0):
    theta = np.asarray(theta, dtype=float)
    simplex = theta.sum(axis=-1) - 1.0
    if abs(float(p_out)) < p_floor:
        supply = np.zeros_like(simplex)
    else:
        mu = psr(feat, theta)
        loss = np.sum(bdiag * mu**2, axis=-1)
        supply = mu.sum(axis=-1) - 1.0 - loss / abs(float(p_out))
    simplex, supply = np.broadcast_arrays(simplex, supply)
    return np.stack([simplex, supply], axis=-1)


def sqrt_psd(mat):
    """Symmetric square root of (batched) PSD 3x3 matrices via eigh."""
    w, v = np.linalg.eigh(mat)
    w = np.sqrt(np.maximum(w, 0.0))
    return np.einsum("...ij,...j,...kj->...ik", v, w, v)


def _observe(state, theta, params, p_out, config, policy):
    feat_state = CellState(np.maximum(state.soc, SOC_FEATURE_FLOOR), state.temp)
    feat = features(feat_state, params, p_out, policy)
    bdiag = loss_diag(state, params, p_out)
    hmat = np.einsum("...nk,...n,...nl->...kl", feat.phi, bdiag, feat.phi)
    theta = np.asarray(theta, dtype=float)
    loss_block = np.einsum("...kl,...l->...k", sqrt_psd(hmat), theta)
    g = inequality_residuals(state, theta, feat, params, p_out, config)
    e = equality_residuals(theta, feat, bdiag, p_out, config.p_floor)
    bg, be = config.barrier_g, config.barrier_e
    obs = VirtualObservation(
        loss_block,
        barrier_g(g, bg.alpha, bg.beta, bg.smooth),
        barrier_e(e, be.alpha, be.beta),
    )
    return obs, feat


def observe(state, theta, params, p_out, config, policy=PolicyParameters()):
    """Noise-free virtual observation ``h(x, theta)`` at one step."""
    return _observe(state, theta, params, p_out, config, policy)[0]


class Rollout(NamedTuple):
    soc: np.ndarray  # (H+1, ..., n)
    temp: np.ndarray  # (H+1, ..., n)
    mu: np.ndarray  # (H+1, ..., n)
    observations: np.ndarray  # (..., d)
    clamped: np.ndarray  # (...,) any SoC clamping along the trajectory


def rollout(x_k, theta, forecast, params, config, policy=PolicyParameters()):
    """Propagate ``x_k`` under the policy and stack observations over k..k+H.

    ``theta`` may be ``(3,)`` or ``(M, 3)``; the state is broadcast to the
    batch. ``forecast`` must hold ``H + 1`` predicted output powers.
    """
    forecast = np.asarray(forecast, dtype=float)
    if forecast.shape != (config.horizon + 1,):
        raise ConfigError(f"forecast must have horizon+1={config.horizon + 1} entries", "forecast")
    theta = np.asarray(theta, dtype=float)
    batch = theta.shape[:-1]
    n = np.shape(x_k.soc)[-1]
    q = np.broadcast_to(np.asarray(x_k.soc, dtype=float), batch + (n,)).copy()
    temp = np.broadcast_to(np.asarray(x_k.temp, dtype=float), batch + (n,)).copy()
    clamped = np.zeros(batch, dtype=bool)
    socs, temps, mus, ys = [], [], [], []
    for t, p in enumerate(forecast):
        state = CellState(q, temp)
        obs, feat = _observe(state, theta, params, p, config, policy)
        mu = psr(feat, theta)
        socs.append(q)
        temps.append(temp)
        mus.append(mu)
        ys.append(obs.vector())
        if t < config.horizon:
            new_state, flag = cell.step(params, state, mu, p, config.dt)
            q, temp = new_state
            clamped |= flag.any(axis=-1)
    return Rollout(np.stack(socs), np.stack(temps), np.stack(mus), np.concatenate(ys, axis=-1), clamped)


def obs_weights(n, forecast, config):
    """Diagonal of the stacked observation precision (Q blocks, one per step)."""
    w = []
    for p in np.asarray(forecast, dtype=float):
        ql = 1.0 / _floored(p, config.p_floor) ** 2 if config.q_loss == "auto" else float(config.q_loss)
        blk = np.full(step_size(n), config.q_pen)
        blk[:3] = ql
        w.append(blk)
    return np.concatenate(w)


def prior_cost(theta, config, theta_nominal=None):
    nominal = np.asarray(config.theta_nominal if theta_nominal is None else theta_nominal, dtype=float)
    d = np.asarray(theta, dtype=float) - nominal
    return np.einsum("...i,ij,...j->...", d, config.theta_prior_weight, d)


def data_misfit(observations, weights):
    """``sum y^T Q y`` for stacked noise-free observations."""
    return np.sum(weights * np.square(observations), axis=-1)


def mhe_cost(theta, x_k, forecast, params, config, policy=PolicyParameters(), theta_nominal=None):
    """Penalized horizon cost; batched over leading axes of ``theta``."""
    n = np.shape(x_k.soc)[-1]
    ro = rollout(x_k, theta, forecast, params, config, policy)
    return data_misfit(ro.observations, obs_weights(n, forecast, config)) + prior_cost(
        theta, config, theta_nominal
    )


__all__ = [
    "BarrierParams",
    "OpmConfig",
    "ObservationLayout",
    "VirtualObservation",
    "Rollout",
    "INEQ_CLASSES",
    "EQ_NAMES",
    "step_size",
    "loss_diag",
    "total_loss",
    "inequality_residuals",
    "equality_residuals",
    "barrier_g",
    "barrier_e",
    "sqrt_psd",
    "observe",
    "rollout",
    "obs_weights",
    "prior_cost",
    "data_misfit",
    "mhe_cost",
]
