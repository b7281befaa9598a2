import numpy as np
import pytest

from bess_opm.cell import CellState, PackParameters
from bess_opm.errors import ConfigError, SimulationFault
from bess_opm.lowlevel import (
    BusModel,
    PiState,
    allocate,
    bus_step,
    discrete_loop_poles,
    pi_mismatch,
    power_limits,
)


class TestPi:
    def test_no_error_no_output(self):
        pi = PiState(v_ref=30.0)
        assert all(pi_mismatch(pi, 30.0, 1.0) == 0.0 for _ in range(5))

    def test_constant_error(self):
        pi = PiState(kp=5.0, ki=20.0, v_ref=30.0)
        eps, tau, dt = 0.2, 3.0, 0.5
        for _ in range(int(tau / dt)):
            out = pi_mismatch(pi, 30.0 - eps, dt)
        assert out == pytest.approx(5.0 * eps + 20.0 * eps * tau)

    def test_zero_gains(self):
        pi = PiState(kp=0.0, ki=0.0)
        assert pi_mismatch(pi, 12.0, 1.0) == 0.0

    def test_frozen_integral(self):
        pi = PiState(kp=1.0, ki=1.0, v_ref=30.0)
        pi_mismatch(pi, 29.0, 1.0)
        out = pi_mismatch(pi, 29.0, 1.0, freeze_integral=True)
        assert pi.integral == 1.0 and out == 2.0

    def test_integral_limit(self):
        pi = PiState(kp=0.0, ki=1.0, integral_limit=2.0)
        for _ in range(10):
            pi_mismatch(pi, 0.0, 1.0)
        assert pi.integral == 2.0

    def test_invalid(self):
        with pytest.raises(ConfigError):
            PiState(kp=-1.0)
        with pytest.raises(ValueError):
            pi_mismatch(PiState(), 30.0, 0.0)


class TestAllocate:
    def wide(self, n=2):
        params = PackParameters(n=n, current_limits=(-100.0, 100.0))
        return params, CellState(np.full(n, 0.5), np.full(n, 298.0))

    def test_proportional(self):
        params, state = self.wide()
        ref, sat = allocate([0.6, 0.4], 100.0, 0.0, params, state)
        np.testing.assert_allclose(ref, [60.0, 40.0])
        assert not sat.any()

    def test_clamped(self):
        u = 3.755625
        params = PackParameters(n=2, current_limits=(-100.0, 50.0 / u))
        state = CellState(np.full(2, 0.5), np.full(2, 298.0))
        ref, sat = allocate([0.6, 0.4], 100.0, 0.0, params, state)
        np.testing.assert_allclose(ref, [50.0, 40.0])
        assert sat.tolist() == [True, False]

    def test_mismatch_split(self):
        params, state = self.wide()
        ref, _ = allocate([0.6, 0.4], 100.0, 20.0, params, state)
        np.testing.assert_allclose(ref, [72.0, 48.0])

    def test_conservation_and_clamps(self):
        rng = np.random.default_rng(0)
        params = PackParameters(n=6)
        for _ in range(200):
            state = CellState(rng.uniform(0.1, 0.9, 6), np.full(6, 298.0))
            mu = rng.dirichlet(np.ones(6))
            p, pt = rng.uniform(-150, 150), rng.uniform(-20, 20)
            ref, sat = allocate(mu, p, pt, params, state)
            lo, hi = power_limits(params, state)
            assert np.all(ref >= lo) and np.all(ref <= hi)
            if not sat.any():
                assert ref.sum() == pytest.approx(p + pt)

    def test_negative_share(self):
        params, state = self.wide()
        with pytest.raises(ValueError):
            allocate([1.2, -0.2], 10.0, 0.0, params, state)


class TestBus:
    def test_balanced(self):
        bus = BusModel()
        assert bus_step(bus, 50.0, 50.0, 1.0) == 30.0

    def test_ideal_deficit(self):
        bus = BusModel(gain=0.01)
        assert bus_step(bus, 90.0, 120.0, 1.0) == pytest.approx(29.7)

    def test_dynamic_constant(self):
        bus = BusModel(mode="dynamic", capacitance=2.0)
        for _ in range(5):
            v = bus_step(bus, 10.0, 10.0, 0.1)
        assert v == 30.0

    def test_dynamic_collapse(self):
        bus = BusModel(mode="dynamic", capacitance=0.01)
        with pytest.raises(SimulationFault):
            bus_step(bus, 0.0, 1000.0, 1.0)

    def test_bad_mode(self):
        with pytest.raises(ConfigError):
            BusModel(mode="analog")


def test_closed_loop_matches_pole_analysis():
    kp, ki, g, dt = 5.0, 90.0, 0.01, 1.0
    poles = discrete_loop_poles(kp, ki, g, dt)
    assert np.all(np.abs(poles) < 1)
    pi = PiState(kp=kp, ki=ki, v_ref=30.0)
    bus = BusModel(gain=g)
    demand, supplied = [], []
    for k in range(40):
        d = 90.0 if k < 10 else 120.0
        p_tilde = pi_mismatch(pi, bus.voltage, dt)
        s = 90.0 + p_tilde
        bus_step(bus, s, d, dt)
        demand.append(d)
        supplied.append(s)
    err = np.array(demand) - np.array(supplied)
    # E_k = (1 - a - b) E_{k-1} + a E_{k-2} after the step
    a, b = kp * g, ki * g * dt
    for k in range(12, 40):
        assert err[k] == pytest.approx((1 - a - b) * err[k - 1] + a * err[k - 2], abs=1e-9)
    assert abs(err[15]) < 0.5 and abs(bus.voltage - 30.0) < 0.03
