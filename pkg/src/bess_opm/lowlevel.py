"""Bus-voltage PI compensation and clamped per-cell power references."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import cell
from .errors import ConfigError, SimulationFault

BUS_MODES = ("ideal", "dynamic")


@dataclass
class PiState:
    """PI regulator on the bus voltage error; ``integral`` is in volt-seconds."""

    kp: float = 5.0
    ki: float = 90.0
    v_ref: float = 30.0
    integral: float = 0.0
    integral_limit: float = np.inf

    def __post_init__(self):
        if self.kp < 0 or self.ki < 0:
            raise ConfigError("PI gains must be >= 0", "lowlevel")
        if self.integral_limit <= 0:
            raise ConfigError("must be > 0", "lowlevel.integral_limit")


@dataclass
class BusModel:
    """Surrogate for the measured output bus voltage.

    ``ideal``: V = V* - gain * (demanded - supplied), no memory.
    ``dynamic``: C V dV/dt = supplied - demanded, explicit Euler.
    """

    mode: str = "ideal"
    v_ref: float = 30.0
    gain: float = 0.01
    capacitance: float = 1.0
    voltage: float | None = None

    def __post_init__(self):
        if self.mode not in BUS_MODES:
            raise ConfigError(f"must be one of {BUS_MODES}", "lowlevel.bus_mode")
        if self.voltage is None:
            self.voltage = self.v_ref
        if self.mode == "dynamic" and (self.voltage <= 0 or self.capacitance <= 0):
            raise ConfigError("dynamic bus needs positive voltage and capacitance", "lowlevel")


def pi_mismatch(pi, v_out, dt, *, freeze_integral=False):
    """Estimated demand mismatch ``K_P e + K_I * integral(e)``; updates ``pi``.

    Rectangular integration; the integral is left untouched while
    ``freeze_integral`` is set (all cells saturated).
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    err = pi.v_ref - v_out
    if not freeze_integral:
        pi.integral = float(np.clip(pi.integral + err * dt, -pi.integral_limit, pi.integral_limit))
    return pi.kp * err + pi.ki * pi.integral


def power_limits(params, state):
    u = cell.ocv(params, state.soc)
    lo, hi = params.current_limits
    return u * lo, u * hi


def allocate(mu, p_out_pred, p_tilde, params, state):
    """Split ``P_out + P_tilde`` by ``mu`` and clamp to each cell's limits.

    Returns ``(references, saturated)``.
    """
    mu = np.asarray(mu, dtype=float)
    if np.any(mu < 0):
        raise ValueError("power-sharing ratios must be >= 0")
    p_min, p_max = power_limits(params, state)
    raw = mu * (p_out_pred + p_tilde)
    ref = np.maximum(np.minimum(raw, p_max), p_min)
    return ref, ref != raw


def bus_step(bus, supplied, demanded, dt):
    """Advance the bus surrogate and return the new voltage."""
    if bus.mode == "ideal":
        bus.voltage = bus.v_ref - bus.gain * (demanded - supplied)
        return bus.voltage
    if bus.voltage <= 0:
        raise SimulationFault(f"bus voltage collapsed to {bus.voltage:.4g} V")
    v = bus.voltage + dt * (supplied - demanded) / (bus.capacitance * bus.voltage)
    if not v > 0:
        raise SimulationFault(
            f"bus voltage collapsed to {v:.4g} V (supplied {supplied:.4g} W, demanded {demanded:.4g} W)"
        )
    bus.voltage = v
    return v


def discrete_loop_poles(kp, ki, gain, dt):
    """Poles of the sampled supply-error loop with the ideal bus.

    The PI reads the voltage produced in the previous step, so the error
    ``E_k = D - S_k`` obeys ``E_k = (1 - kp g - ki g dt) E_{k-1} + kp g E_{k-2}``.
    """
    a = kp * gain
    b = ki * gain * dt
    return np.roots([1.0, -(1.0 - a - b), -a])


__all__ = [
    "PiState",
    "BusModel",
    "pi_mismatch",
    "power_limits",
    "allocate",
    "bus_step",
    "discrete_loop_poles",
]
