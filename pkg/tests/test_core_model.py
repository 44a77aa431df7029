import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from app.errors import ClockDomainError, ClockModelError, ConfigError
from app.models import ClockPolicy, DelayPolicy, SystemParams
from app.services.core_model import (
    HardwareClock,
    RateSegment,
    constant_clock,
    invert_local_time,
    local_time,
    rate_extrema,
    sample_clock,
    sample_delay,
    validate_clock,
    validate_delay_policy,
)

THETA = 1.01


def _piecewise() -> HardwareClock:
    return HardwareClock(
        (
            RateSegment(0.0, 1.0, 0.002),
            RateSegment(1.0, 1.002, -0.001),
            RateSegment(3.0, 1.0, 0.0),
        ),
        offset=0.25,
    )


def test_constant_clock_is_affine():
    clock = constant_clock(1.005, offset=0.1)
    assert local_time(clock, 0.0) == pytest.approx(0.1)
    assert local_time(clock, 2.0) == pytest.approx(0.1 + 2.01)


def test_local_time_is_continuous_at_breakpoints():
    clock = _piecewise()
    for t in (1.0, 3.0):
        assert local_time(clock, t - 1e-12) == pytest.approx(local_time(clock, t), abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(t=st.floats(min_value=0.0, max_value=10.0, allow_nan=False))
def test_inversion_recovers_real_time(t):
    clock = _piecewise()
    back = invert_local_time(clock, local_time(clock, t))
    assert math.isclose(back, t, rel_tol=1e-12, abs_tol=1e-12)


@settings(max_examples=100, deadline=None)
@given(
    a=st.floats(min_value=0.0, max_value=5.0),
    width=st.floats(min_value=1e-6, max_value=5.0),
)
def test_drift_bounds_elapsed_local_time(a, width):
    clock = _piecewise()
    validate_clock(clock, THETA)
    b = a + width
    elapsed = local_time(clock, b) - local_time(clock, a)
    assert width * (1 - 1e-12) <= elapsed <= THETA * width * (1 + 1e-12)


def test_negative_real_time_is_rejected():
    with pytest.raises(ClockDomainError):
        local_time(constant_clock(1.0), -1.0)


def test_local_time_before_offset_is_rejected():
    with pytest.raises(ClockDomainError):
        invert_local_time(constant_clock(1.0, offset=1.0), 0.5)


def test_rate_outside_drift_bound_is_rejected():
    with pytest.raises(ClockModelError):
        validate_clock(constant_clock(1.02), THETA)
    with pytest.raises(ClockModelError):
        validate_clock(constant_clock(0.99), THETA)


def test_slope_above_nu_is_rejected():
    clock = HardwareClock((RateSegment(0.0, 1.0, 0.01), RateSegment(0.5, 1.005, 0.0)))
    validate_clock(clock, THETA)
    with pytest.raises(ClockModelError):
        validate_clock(clock, THETA, nu=0.001)


def test_rate_jump_breaks_lipschitz_model():
    clock = HardwareClock((RateSegment(0.0, 1.0), RateSegment(1.0, 1.005)))
    with pytest.raises(ClockModelError):
        validate_clock(clock, THETA, nu=1.0)


def test_malformed_clock_is_rejected():
    with pytest.raises(ClockModelError):
        HardwareClock((RateSegment(0.5, 1.0),))
    with pytest.raises(ClockModelError):
        HardwareClock((RateSegment(0.0, 1.0, 0.1),))


def test_rate_extrema_cover_breakpoints():
    lo, hi = rate_extrema(_piecewise(), 0.5, 2.0)
    assert lo == pytest.approx(1.001)
    assert hi == pytest.approx(1.002)


@pytest.mark.parametrize(
    "kind", ["all_nominal", "all_max_drift", "random_constant", "drift_worstcase_split"]
)
def test_sampled_clocks_respect_drift(kind):
    params = SystemParams(n=4, theta=THETA, d=1e-3, u=1e-4, big_f=1e-3)
    rng = np.random.default_rng(7)
    for v in range(params.n):
        clock = sample_clock(params, ClockPolicy(kind=kind), rng, node=v)
        validate_clock(clock, THETA)
        assert 0.0 <= clock.offset < params.big_f


def test_sinusoid_clock_respects_nu():
    params = SystemParams(n=4, theta=THETA, nu=1e-3, d=1e-3, u=1e-4, big_f=1e-3)
    clock = sample_clock(params, ClockPolicy(kind="sinusoid_bounded"), np.random.default_rng(3), horizon=100.0)
    validate_clock(clock, THETA, nu=params.nu)


def test_sinusoid_without_nu_or_period_is_a_config_error():
    params = SystemParams(n=4, theta=THETA, d=1e-3, u=1e-4, big_f=1e-3)
    with pytest.raises(ConfigError):
        sample_clock(params, ClockPolicy(kind="sinusoid_bounded"), 0)


@pytest.mark.parametrize(
    "kind", ["constant_max", "constant_min", "uniform_random", "adversarial_split"]
)
def test_delays_stay_in_channel_window(kind):
    params = SystemParams(n=4, theta=THETA, d=1e-3, u=1e-4, big_f=1e-3)
    rng = np.random.default_rng(1)
    policy = DelayPolicy(kind=kind)
    for v in range(4):
        for w in range(4):
            delay = sample_delay(policy, params, v, w, rng)
            assert params.d - params.u <= delay <= params.d


def test_per_link_table_outside_window_is_rejected():
    params = SystemParams(n=4, theta=THETA, d=1e-3, u=1e-4, big_f=1e-3)
    table = [[1e-3] * 4 for _ in range(4)]
    validate_delay_policy(DelayPolicy(kind="per_link_table", table=table), params)
    table[1][2] = 2e-3
    with pytest.raises(ConfigError):
        validate_delay_policy(DelayPolicy(kind="per_link_table", table=table), params)


def test_system_params_defaults_and_limits():
    assert SystemParams(n=7, theta=1.0, d=1.0, u=0.1, big_f=1.0).f == 2
    with pytest.raises(ValueError):
        SystemParams(n=4, f=2, theta=1.0, d=1.0, u=0.1, big_f=1.0)
    with pytest.raises(ValueError):
        SystemParams(n=4, theta=1.0, d=1.0, u=2.0, big_f=1.0)
