import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acfleet import NonFiniteResult
from acfleet.thermal import (
    HouseState,
    SolarConfig,
    ThermalCoefficients,
    ThermalInputs,
    ThermalParams,
    affine_dynamics,
    clamp_temperatures,
    solar_gain,
    step_thermal,
)

DEFAULT = ThermalParams()
QA_ON = -15000.0 / 1.35


def euler_step(Th, Tm, params, To, Qa, Qs=0.0, dt=4.0, h=0.01):
    """Independent explicit-Euler integration of the two-state ODE."""
    n = int(round(dt / h))
    for _ in range(n):
        dTh = (params.Uh * (To - Th) + params.Hm * (Tm - Th) + Qa + Qs) / params.Ch
        dTm = params.Hm * (Th - Tm) / params.Cm
        Th, Tm = Th + h * dTh, Tm + h * dTm
    return Th, Tm


def test_default_parameters():
    assert DEFAULT.as_array().tolist() == [218.0, 3.45e6, 9.08e5, 2840.0]


def test_equilibrium_is_fixed_point():
    out = step_thermal(HouseState(30.0, 30.0), DEFAULT, ThermalInputs(To=30.0))
    assert out.Th == pytest.approx(30.0, abs=1e-12)
    assert out.Tm == pytest.approx(30.0, abs=1e-12)


def test_relaxes_toward_outdoor_without_overshoot():
    out = step_thermal(HouseState(20.0, 20.0), DEFAULT, ThermalInputs(To=30.0))
    assert 20.0 < out.Th < 30.0
    assert 20.0 < out.Tm < out.Th


def test_cooling_lowers_air_temperature_and_matches_euler():
    off = step_thermal(HouseState(20.0, 20.0), DEFAULT, ThermalInputs(To=30.0))
    on = step_thermal(HouseState(20.0, 20.0), DEFAULT, ThermalInputs(To=30.0, Qa=QA_ON))
    assert on.Th < off.Th
    Th_ref, Tm_ref = euler_step(20.0, 20.0, DEFAULT, 30.0, QA_ON)
    assert abs(on.Th - Th_ref) < 1e-3
    assert abs(on.Tm - Tm_ref) < 1e-3


def test_four_unit_steps_equal_one_long_step():
    big = ThermalCoefficients.from_params(DEFAULT, 4.0)
    small = ThermalCoefficients.from_params(DEFAULT, 1.0)
    Th, Tm = 23.0, 21.5
    a = big.advance(Th, Tm, 31.0, QA_ON, 120.0)
    for _ in range(4):
        Th, Tm = small.advance(Th, Tm, 31.0, QA_ON, 120.0)
    assert abs(a[0] - Th) < 1e-6 and abs(a[1] - Tm) < 1e-6


@settings(max_examples=50, deadline=None)
@given(
    th=st.floats(10, 40), tm=st.floats(10, 40), to=st.floats(15, 45),
    q1=st.floats(-20000, 0), q2=st.floats(-20000, 0),
)
def test_monotone_in_heat_flow(th, tm, to, q1, q2):
    coeffs = ThermalCoefficients.from_params(DEFAULT, 4.0)
    lo, hi = sorted((q1, q2))
    if hi - lo < 1e-6:
        return
    assert coeffs.advance(th, tm, to, lo)[0] < coeffs.advance(th, tm, to, hi)[0]


def test_vectorised_matches_scalar():
    rng = np.random.default_rng(3)
    Th = rng.uniform(15, 30, 8)
    Tm = rng.uniform(15, 30, 8)
    coeffs = ThermalCoefficients.from_params(DEFAULT, 4.0)
    vec = coeffs.advance(Th, Tm, 29.0, QA_ON)
    for i in range(8):
        s = step_thermal(HouseState(Th[i], Tm[i]), DEFAULT, ThermalInputs(To=29.0, Qa=QA_ON))
        assert vec[0][i] == s.Th and vec[1][i] == s.Tm


def test_affine_dynamics_reproduces_step():
    A, B, e = affine_dynamics(DEFAULT, 31.0, 4.0)
    x = np.array([22.0, 21.0])
    ref = step_thermal(HouseState(*x), DEFAULT, ThermalInputs(To=31.0, Qa=QA_ON))
    got = A @ x + B * QA_ON + e
    assert np.allclose(got, [ref.Th, ref.Tm], atol=1e-9)


@pytest.mark.parametrize("bad", [dict(Uh=0.0), dict(Cm=-1.0), dict(Hm=float("nan"))])
def test_invalid_parameters_rejected(bad):
    with pytest.raises(ValueError):
        ThermalParams(**bad)


def test_non_finite_state_raises():
    coeffs = ThermalCoefficients.from_params(DEFAULT, 4.0)
    with pytest.raises(NonFiniteResult):
        coeffs.advance(np.inf, 20.0, 30.0, 0.0)


def test_bad_timestep_rejected():
    with pytest.raises(ValueError):
        ThermalInputs(To=30.0, dt=0.0)


def test_clamp_flags_divergence():
    Th, Tm, diverged = clamp_temperatures(np.array([20.0, 95.0]), np.array([20.0, 20.0]))
    assert diverged and Th[1] == 80.0
    _, _, ok = clamp_temperatures(np.array([20.0]), np.array([21.0]))
    assert not ok


class TestSolarGain:
    def test_disabled_by_default(self):
        assert solar_gain(180, 12 * 3600) == 0.0
        assert solar_gain(180, 12 * 3600, SolarConfig()) == 0.0

    def test_zero_at_night(self):
        cfg = SolarConfig.from_mapping({(0, 0): 500.0})
        assert solar_gain(180, 3 * 3600, cfg) == 0.0
        assert solar_gain(180, 18 * 3600, cfg) == 0.0

    def test_constant_polynomial(self):
        cfg = SolarConfig.from_mapping({(0, 0): 500.0})
        assert solar_gain(180, 12 * 3600, cfg) == 500.0

    def test_degree_limit(self):
        with pytest.raises(ValueError):
            SolarConfig.from_mapping({(3, 2): 1.0})
