"""Feature functions and the parameterized power-sharing-ratio policy.

Every function reduces along the last axis (cells), so a batch of packs
(e.g. one per particle) is handled with a leading axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import cell
from .errors import ConfigError, DomainError

THETA_FLOOR = 1e-6
SIMPLEX_TOL = 1e-9


def project_simplex(theta, floor=THETA_FLOOR):
    """Clamp components below ``floor`` and renormalize onto the simplex.

    Works row-wise on arrays of shape ``(..., 3)``.
    """
    theta = np.asarray(theta, dtype=float)
    theta = np.where(np.isfinite(theta), theta, floor)
    theta = np.maximum(theta, floor)
    return theta / theta.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class PolicyParameters:
    theta: tuple = (1 / 3, 1 / 3, 1 / 3)
    xi_q: float = 8.0
    xi_t: float = 12.0
    literal_phi: bool = False

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=float)
        if th.shape != (3,):
            raise ConfigError("theta must have 3 components", "theta")
        if abs(th.sum() - 1.0) > SIMPLEX_TOL or np.any(th < 0) or np.any(th > 1):
            raise ConfigError("theta must lie on the probability simplex", "theta")
        if self.xi_q <= 0 or self.xi_t <= 0:
            raise ConfigError("exponents must be > 0", "xi")


class FeatureMatrix(NamedTuple):
    phi: np.ndarray  # (..., n, 3)
    direction: str  # "discharging" or "charging"


def _normalized_power(x, expo):
    # x**expo / sum(x**expo) evaluated in log space.
    z = expo * np.log(x)
    z = z - z.max(axis=-1, keepdims=True)
    w = np.exp(z)
    return w / w.sum(axis=-1, keepdims=True)


def _literal_ratio_sum(x, expo):
    # sum_i (x_j / x_i)**expo, i.e. the exponent-inside-the-sum variant.
    return x**expo * (x ** (-expo)).sum(axis=-1, keepdims=True)


def phi_soc(soc, xi_q, direction="discharging", literal=False):
    soc = np.asarray(soc, dtype=float)
    if np.any(soc <= 0):
        raise DomainError("SoC feature needs strictly positive SoC")
    if direction not in ("discharging", "charging"):
        raise DomainError(f"unknown direction {direction!r}")
    expo = xi_q if direction == "discharging" else -xi_q
    if literal:
        return _literal_ratio_sum(soc, -expo)
    return _normalized_power(soc, expo)


def phi_temp(temp, xi_t, literal=False):
    temp = np.asarray(temp, dtype=float)
    if np.any(temp <= 0):
        raise DomainError("temperature feature needs temperatures > 0 K")
    if literal:
        return _literal_ratio_sum(temp, -xi_t)
    return _normalized_power(temp, -xi_t)


def phi_res(res, converter_res):
    """Harmonic weights of the total series resistance of each module."""
    total = np.asarray(res, dtype=float) + converter_res
    if np.any(total <= 0):
        raise DomainError("total module resistance must be > 0")
    g = 1.0 / total
    return g / g.sum(axis=-1, keepdims=True)


def direction_of(p_out):
    return "discharging" if p_out >= 0 else "charging"


def features(state, params, p_out, policy=PolicyParameters()):
    """Assemble ``Phi`` with columns ``[phi_q, phi_T, phi_R]``.

    ``p_out`` must be a scalar here; the direction tie-break at zero is
    discharging.
    """
    direction = direction_of(float(p_out))
    r = cell.resistance(params, state.soc)
    phi = np.stack(
        [
            phi_soc(state.soc, policy.xi_q, direction, policy.literal_phi),
            phi_temp(state.temp, policy.xi_t, policy.literal_phi),
            phi_res(r, params.converter_res),
        ],
        axis=-1,
    )
    return FeatureMatrix(phi, direction)


def psr(feat, theta):
    """Power-sharing ratios ``mu = Phi @ theta`` (theta may be batched)."""
    phi = feat.phi if isinstance(feat, FeatureMatrix) else np.asarray(feat)
    theta = np.asarray(theta, dtype=float)
    return np.einsum("...nk,...k->...n", phi, theta)


__all__ = [
    "PolicyParameters",
    "FeatureMatrix",
    "project_simplex",
    "phi_soc",
    "phi_temp",
    "phi_res",
    "features",
    "psr",
    "direction_of",
]
