"""Predicted and actual output-power series."""

from __future__ import annotations

import numpy as np


def predicted_power(profile, times):
    """Nominal square wave; the sign flips every ``switch_period`` seconds."""
    times = np.asarray(times, dtype=float)
    sign = np.full(times.shape, float(profile.start_sign))
    if profile.switch_period is not None:
        flips = np.floor(times / profile.switch_period + 1e-9)
        sign = sign * np.where(flips % 2 == 0, 1.0, -1.0)
    return profile.nominal * sign


def correlated_noise(half_width, times, corr_time, rng):
    """Uniform knots in [-w, w] every ``corr_time`` s, linearly interpolated."""
    times = np.asarray(times, dtype=float)
    if half_width == 0 or times.size == 0:
        return np.zeros(times.shape)
    knots = np.arange(0.0, times[-1] + corr_time, corr_time)
    values = rng.uniform(-half_width, half_width, knots.size)
    return np.interp(times, knots, values)


def gen_demand(profile, duration, dt, seed):
    """Return ``(predicted, actual)`` sampled at ``0, dt, ..., duration``."""
    steps = int(round(duration / dt))
    times = np.arange(steps + 1) * dt
    pred = predicted_power(profile, times)
    rng = np.random.default_rng([seed, 2])
    actual = pred + correlated_noise(profile.noise, times, profile.corr_time, rng)
    for t_ev, p_ev in sorted(profile.events):
        actual = np.where(times >= t_ev - 1e-9, p_ev, actual)
    return pred, actual


def switch_times(profile, duration):
    """Instants at which the predicted power changes sign."""
    if profile.switch_period is None:
        return np.empty(0)
    return np.arange(profile.switch_period, duration + 1e-9, profile.switch_period)


__all__ = ["predicted_power", "correlated_noise", "gen_demand", "switch_times"]
