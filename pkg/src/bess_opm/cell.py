"""Rint electrical model and lumped thermal model of a battery cell.

All functions broadcast: a :class:`CellParameters` may hold scalars (one
cell) or per-cell arrays (a pack, see :class:`PackParameters`), and the
state/power arguments may carry extra leading axes (e.g. particles).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DomainError, ModelError

# Samsung INR18650-25R identification used throughout the examples/tests.
TABLE1_OCV_COEFFS = (3.3, 2.61, -9.36, 19.7, -19.0, 6.9)
SECONDS_PER_HOUR = 3600.0


@dataclass(frozen=True)
class CellParameters:
    """Electrical, thermal and safety parameters of a cell.

    Capacity is stored in amp-hours; the SoC equation works in coulombs.
    ``ocv_coeffs`` are ascending powers of SoC. The internal resistance is
    ``res_base + res_exp_coeff * exp(-res_exp_rate * soc)``.
    """

    capacity_ah: float = 2.5
    ocv_coeffs: tuple = TABLE1_OCV_COEFFS
    res_base: float = 0.0313
    res_exp_coeff: float = 0.0678
    res_exp_rate: float = 13.2
    converter_res: float = 0.010
    heat_capacity: float = 40.23
    conv_resistance: float = 41.05
    env_temp: float = 298.0
    soc_limits: tuple = (0.05, 0.95)
    current_limits: tuple = (-5.0, 5.0)
    temp_limits: tuple = (273.15, 318.15)

    def __post_init__(self):
        for name in ("capacity_ah", "heat_capacity", "conv_resistance"):
            if np.any(np.asarray(getattr(self, name)) <= 0):
                raise ConfigError("must be > 0", name)
        for name in ("soc_limits", "current_limits", "temp_limits"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ConfigError("min must be < max", name)
        if len(self.ocv_coeffs) == 0:
            raise ConfigError("needs at least one coefficient", "ocv_coeffs")
        # Minimum of a + b*exp(-c q) on [0, 1] sits at an endpoint.
        r0 = np.asarray(self.res_base) + np.asarray(self.res_exp_coeff)
        r1 = np.asarray(self.res_base) + np.asarray(self.res_exp_coeff) * np.exp(
            -np.asarray(self.res_exp_rate)
        )
        if np.any(r0 <= 0) or np.any(r1 <= 0):
            raise ConfigError("resistance curve must stay positive on [0, 1]", "res_base")

    @property
    def capacity_coulomb(self):
        return np.asarray(self.capacity_ah) * SECONDS_PER_HOUR


@dataclass(frozen=True)
class PackParameters(CellParameters):
    """Parameters of ``n`` cells; any per-cell field may be a length-n array."""

    n: int = 1

    def __post_init__(self):
        super().__post_init__()
        if self.n < 1:
            raise ConfigError("must be >= 1", "n")
        for name in ("capacity_ah", "res_base", "res_exp_coeff", "res_exp_rate"):
            val = np.asarray(getattr(self, name), dtype=float)
            if val.ndim not in (0, 1) or (val.ndim == 1 and val.shape[0] != self.n):
                raise ConfigError(f"expected scalar or length-{self.n} array", name)
            object.__setattr__(self, name, np.broadcast_to(val, (self.n,)).copy())

    def cell(self, j):
        """Scalar :class:`CellParameters` view of cell ``j``."""
        kw = {
            f: getattr(self, f)
            for f in CellParameters.__dataclass_fields__
            if f not in ("capacity_ah", "res_base", "res_exp_coeff", "res_exp_rate")
        }
        return CellParameters(
            capacity_ah=float(self.capacity_ah[j]),
            res_base=float(self.res_base[j]),
            res_exp_coeff=float(self.res_exp_coeff[j]),
            res_exp_rate=float(self.res_exp_rate[j]),
            **kw,
        )

    def with_(self, **changes):
        return replace(self, **changes)


class CellState(NamedTuple):
    soc: np.ndarray | float
    temp: np.ndarray | float


class ElectricalPoint(NamedTuple):
    ocv: np.ndarray | float
    resistance: np.ndarray | float
    current: np.ndarray | float
    terminal_v: np.ndarray | float
    internal_power: np.ndarray | float
    loss: np.ndarray | float


def _check_soc(soc):
    soc = np.asarray(soc, dtype=float)
    if np.any(soc < 0.0) or np.any(soc > 1.0) or np.any(np.isnan(soc)):
        raise DomainError("state of charge outside [0, 1]")
    return soc


def ocv(params, soc):
    """Open-circuit voltage Z(q) from the polynomial coefficients."""
    soc = _check_soc(soc)
    return np.polynomial.polynomial.polyval(soc, np.asarray(params.ocv_coeffs, dtype=float))


def ocv_slope(params, soc):
    soc = np.asarray(soc, dtype=float)
    c = np.polynomial.polynomial.polyder(np.asarray(params.ocv_coeffs, dtype=float))
    return np.polynomial.polynomial.polyval(soc, c)


def resistance(params, soc):
    soc = _check_soc(soc)
    return params.res_base + params.res_exp_coeff * np.exp(-params.res_exp_rate * soc)


def resistance_slope(params, soc):
    soc = np.asarray(soc, dtype=float)
    return -params.res_exp_rate * params.res_exp_coeff * np.exp(-params.res_exp_rate * soc)


def _positive_ocv(params, soc):
    u = ocv(params, soc)
    if np.any(u <= 0):
        raise ModelError("open-circuit voltage is not positive")
    return u


def current_from_psr(params, state, psr, p_out):
    """Cell current for a share ``psr`` of the output power ``p_out``."""
    u = _positive_ocv(params, state.soc)
    return np.asarray(psr) * np.asarray(p_out) / u


def electrical_point(params, state, psr, p_out):
    u = _positive_ocv(params, state.soc)
    r = resistance(params, state.soc)
    i = np.asarray(psr) * np.asarray(p_out) / u
    return ElectricalPoint(
        ocv=u,
        resistance=r,
        current=i,
        terminal_v=u - r * i,
        internal_power=u * i,
        loss=(r + params.converter_res) * i**2,
    )


def step_soc(params, state, psr, p_out, dt, *, with_flag=False):
    """One forward-Euler SoC step; the result is clamped to [0, 1].

    With ``with_flag=True`` returns ``(soc, clamped)`` where ``clamped`` marks
    entries that left the unit interval before clamping.
    """
    if dt <= 0:
        raise DomainError("dt must be > 0")
    u = _positive_ocv(params, state.soc)
    q = np.asarray(state.soc, dtype=float) - np.asarray(psr) * np.asarray(p_out) * dt / (
        params.capacity_coulomb * u
    )
    clamped = (q < 0.0) | (q > 1.0)
    q = np.clip(q, 0.0, 1.0)
    if with_flag:
        return q, clamped
    return q


def step_temp(params, state, psr, p_out, dt):
    """One forward-Euler step of the lumped thermal model."""
    if dt <= 0:
        raise DomainError("dt must be > 0")
    u = _positive_ocv(params, state.soc)
    r = resistance(params, state.soc)
    i = np.asarray(psr) * np.asarray(p_out) / u
    temp = np.asarray(state.temp, dtype=float)
    heat = r * i**2 - (temp - params.env_temp) / params.conv_resistance
    return temp + dt / params.heat_capacity * heat


def module_loss(params, state, psr, p_out):
    """Cell plus converter ohmic loss (W)."""
    u = _positive_ocv(params, state.soc)
    r = resistance(params, state.soc)
    return (r + params.converter_res) * (np.asarray(psr) * np.asarray(p_out)) ** 2 / u**2


def step(params, state, psr, p_out, dt):
    """Advance SoC and temperature together; returns ``(CellState, clamped)``."""
    q, clamped = step_soc(params, state, psr, p_out, dt, with_flag=True)
    temp = step_temp(params, state, psr, p_out, dt)
    return CellState(q, temp), clamped


__all__ = [
    "CellParameters",
    "PackParameters",
    "CellState",
    "ElectricalPoint",
    "TABLE1_OCV_COEFFS",
    "ocv",
    "ocv_slope",
    "resistance",
    "resistance_slope",
    "current_from_psr",
    "electrical_point",
    "step_soc",
    "step_temp",
    "module_loss",
    "step",
]
