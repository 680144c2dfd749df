import math

import pytest
from hypothesis import given, settings, strategies as st

from incuwatch.control import ControllerConfig, ControllerState, humidifier_step, onoff_step, pid_step
from incuwatch.plant import PlantParams, initial_state, step_plant

ONOFF = ControllerConfig(mode="onoff", setpoint_c=35.0, hysteresis_c=0.6)


def test_onoff_below_lower_switch_point_turns_on():
    duty, _ = onoff_step(34.5, ONOFF, ControllerState())
    assert duty == 1.0


def test_onoff_above_upper_switch_point_turns_off():
    duty, _ = onoff_step(35.4, ONOFF, ControllerState(prev_output=1.0, initialized=True))
    assert duty == 0.0


def test_onoff_deadband_holds_previous_output():
    on = ControllerState(prev_output=1.0, initialized=True)
    off = ControllerState(prev_output=0.0, initialized=True)
    assert onoff_step(35.0, ONOFF, on)[0] == 1.0
    assert onoff_step(35.0, ONOFF, off)[0] == 0.0


def test_onoff_uninitialized_deadband_treats_prev_as_off():
    duty, st_next = onoff_step(35.0, ONOFF, ControllerState(prev_output=1.0, initialized=False))
    assert duty == 0.0
    assert st_next.initialized


def test_onoff_switches_exactly_at_band_edges():
    # Monotone sweep upward: stays on through the deadband, drops just past it.
    st_c = ControllerState()
    outputs = []
    for measured in [34.6, 34.7, 35.0, 35.3, 35.30001, 36.0]:
        duty, st_c = onoff_step(measured, ONOFF, st_c)
        outputs.append(duty)
    assert outputs == [1.0, 1.0, 1.0, 1.0, 0.0, 0.0]
    # and back down: stays off until just below the lower edge
    outputs = []
    for measured in [35.4, 35.3, 35.0, 34.7, 34.69999, 34.0]:
        duty, st_c = onoff_step(measured, ONOFF, st_c)
        outputs.append(duty)
    assert outputs == [0.0, 0.0, 0.0, 0.0, 1.0, 1.0]


def test_onoff_nonfinite_reading_holds_and_flags_fault():
    st_c = ControllerState(prev_output=1.0, initialized=True)
    duty, st_next = onoff_step(math.nan, ONOFF, st_c)
    assert duty == 1.0
    assert st_next.fault
    # a good reading afterwards clears the flag
    duty, st_next = onoff_step(34.0, ONOFF, st_next)
    assert duty == 1.0 and not st_next.fault


@given(st.lists(st.floats(min_value=-50.0, max_value=150.0), min_size=1, max_size=200))
@settings(max_examples=100, deadline=None)
def test_onoff_output_always_binary(readings):
    st_c = ControllerState()
    for measured in readings:
        duty, st_c = onoff_step(measured, ONOFF, st_c)
        assert duty in (0.0, 1.0)


PID = ControllerConfig(mode="pid", setpoint_c=35.0, kp=0.8, ki=0.005, kd=10.0)


def test_pid_zero_error_zero_history_gives_zero():
    cfg = ControllerConfig(mode="pid", setpoint_c=35.0, kp=0.8, ki=0.005, kd=10.0)
    duty, _ = pid_step(35.0, cfg, ControllerState(), dt=1.0)
    assert duty == 0.0


def test_pid_pure_proportional_value():
    cfg = ControllerConfig(mode="pid", setpoint_c=35.0, kp=0.5, ki=0.0, kd=0.0)
    duty, _ = pid_step(34.0, cfg, ControllerState(), dt=1.0)
    assert duty == pytest.approx(0.5)


def test_pid_saturated_output_freezes_integral():
    cfg = ControllerConfig(mode="pid", setpoint_c=35.0, kp=2.0, ki=0.005, kd=0.0)
    st_c = ControllerState(integral=7.0, initialized=True, prev_error=2.0)
    duty, st_next = pid_step(33.0, cfg, st_c, dt=1.0)
    assert duty == 1.0
    assert st_next.integral == 7.0


def test_pid_negative_error_can_unwind_saturation():
    cfg = ControllerConfig(mode="pid", setpoint_c=35.0, kp=0.0, ki=0.01, kd=0.0)
    st_c = ControllerState(integral=200.0, initialized=True)  # raw = 2.0, saturated
    duty, st_next = pid_step(36.0, cfg, st_c, dt=1.0)
    assert duty == 1.0
    assert st_next.integral == pytest.approx(199.0)  # e = -1 allowed through


def test_pid_antiwindup_bounds_integral_during_long_saturation():
    cfg = ControllerConfig(mode="pid", setpoint_c=35.0, kp=0.8, ki=0.005, kd=0.0)
    st_c = ControllerState()
    entry_integral = None
    for _ in range(1000):
        duty, st_c = pid_step(20.0, cfg, st_c, dt=1.0)  # e = 15, hard saturation
        assert duty == 1.0
        if entry_integral is None:
            entry_integral = st_c.integral
    assert abs(st_c.integral) <= abs(entry_integral) + 15.0 * 1.0


def test_pid_first_call_has_zero_derivative():
    cfg = ControllerConfig(mode="pid", setpoint_c=35.0, kp=0.0, ki=0.0, kd=100.0)
    duty, _ = pid_step(30.0, cfg, ControllerState(), dt=1.0)
    assert duty == 0.0


def test_pid_nonfinite_reading_holds_output():
    st_c = ControllerState(prev_output=0.4, integral=3.0, initialized=True)
    duty, st_next = pid_step(math.inf, PID, st_c, dt=1.0)
    assert duty == 0.4
    assert st_next.fault
    assert st_next.integral == 3.0


def test_pid_rejects_bad_dt():
    with pytest.raises(ValueError):
        pid_step(35.0, PID, ControllerState(), dt=0.0)


@given(
    st.lists(st.floats(min_value=-20.0, max_value=80.0), min_size=1, max_size=200),
    st.floats(min_value=0.1, max_value=5.0),
)
@settings(max_examples=100, deadline=None)
def test_pid_output_always_in_unit_interval(readings, dt):
    st_c = ControllerState()
    for measured in readings:
        duty, st_c = pid_step(measured, PID, st_c, dt=dt)
        assert 0.0 <= duty <= 1.0


def test_humidifier_uses_rh_band():
    cfg = ControllerConfig()  # hum setpoint 55, hysteresis 4
    assert humidifier_step(52.9, cfg, ControllerState())[0] == 1.0
    assert humidifier_step(57.1, cfg, ControllerState())[0] == 0.0
    held = ControllerState(prev_output=1.0, initialized=True)
    assert humidifier_step(55.0, cfg, held)[0] == 1.0


def test_config_validation():
    with pytest.raises(ValueError):
        ControllerConfig(mode="fuzzy").validate()
    with pytest.raises(ValueError):
        ControllerConfig(servo="rectal").validate()
    with pytest.raises(ValueError):
        ControllerConfig(mode="onoff", hysteresis_c=0.0).validate()
    with pytest.raises(ValueError):
        ControllerConfig(mode="pid", ki=-0.1).validate()
    ControllerConfig().validate()


def test_closed_loop_onoff_converges_noise_free():
    # True-state feedback: the band then holds exactly at +-hyst/2 plus
    # at most one tick of overshoot.
    params = PlantParams()
    state = initial_state(params)
    cfg = ControllerConfig(mode="onoff", setpoint_c=35.0, hysteresis_c=0.6)
    st_c = ControllerState()
    duties = []
    for _ in range(3600):
        duty, st_c = onoff_step(state.air_temp_c, cfg, st_c)
        state = step_plant(state, params, duty, 0.0, dt=1.0)
        duties.append(duty)
    tick_slew = params.heater_power_w / params.air_heat_capacity
    assert 34.7 - tick_slew <= state.air_temp_c <= 35.3 + tick_slew
    mean_duty = sum(duties[-600:]) / 600.0
    assert mean_duty == pytest.approx(52.0 / 150.0, abs=0.02)
