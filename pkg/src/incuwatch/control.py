"""Heater and humidifier control laws.

Two step functions close the loop on an air or skin temperature reading:
an on-off law with a symmetric hysteresis deadband, and a positional PID
with conditional-integration anti-windup. Both are pure: the caller owns
the ControllerState and threads it through. A non-finite reading holds
the previous output and raises the fault flag instead of acting on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from .wire import CONTROL_MODES, SERVO_MODES


@dataclass(frozen=True)
class ControllerConfig:
    mode: str = "onoff"          # onoff | pid
    servo: str = "air"           # which temperature the heater regulates
    setpoint_c: float = 35.0
    hysteresis_c: float = 0.6    # full deadband width for onoff
    kp: float = 0.8              # 1/K
    ki: float = 0.005            # 1/(K*s)
    kd: float = 10.0             # s/K
    hum_setpoint_pct: float = 55.0
    hum_hysteresis_pct: float = 4.0

    def validate(self) -> None:
        if self.mode not in CONTROL_MODES:
            raise ValueError(f"mode must be one of {CONTROL_MODES}, got {self.mode!r}")
        if self.servo not in SERVO_MODES:
            raise ValueError(f"servo must be one of {SERVO_MODES}, got {self.servo!r}")
        if not math.isfinite(self.setpoint_c):
            raise ValueError("setpoint_c must be finite")
        if self.mode == "onoff" and not (math.isfinite(self.hysteresis_c) and self.hysteresis_c > 0):
            raise ValueError(f"hysteresis_c must be > 0 for onoff, got {self.hysteresis_c}")
        for name in ("kp", "ki", "kd"):
            gain = getattr(self, name)
            if not (math.isfinite(gain) and gain >= 0):
                raise ValueError(f"{name} must be >= 0, got {gain}")
        if not (math.isfinite(self.hum_hysteresis_pct) and self.hum_hysteresis_pct > 0):
            raise ValueError(f"hum_hysteresis_pct must be > 0, got {self.hum_hysteresis_pct}")
        if not math.isfinite(self.hum_setpoint_pct):
            raise ValueError("hum_setpoint_pct must be finite")


@dataclass(frozen=True)
class ControllerState:
    prev_output: float = 0.0
    integral: float = 0.0     # K*s
    prev_error: float = 0.0   # K
    initialized: bool = False
    fault: bool = False       # last reading was non-finite


def onoff_step(
    measured_c: float,
    cfg: ControllerConfig,
    st: ControllerState,
    setpoint: float | None = None,
    hysteresis: float | None = None,
) -> tuple[float, ControllerState]:
    """Bang-bang with a symmetric deadband: switch at setpoint +- hyst/2.

    Inside the deadband the previous output holds (0 before the first
    switch). setpoint/hysteresis overrides let the same law drive the
    humidifier off its RH reading.
    """
    sp = cfg.setpoint_c if setpoint is None else setpoint
    hyst = cfg.hysteresis_c if hysteresis is None else hysteresis
    if not (math.isfinite(measured_c)):
        return st.prev_output, replace(st, fault=True)
    if measured_c < sp - hyst / 2.0:
        duty = 1.0
    elif measured_c > sp + hyst / 2.0:
        duty = 0.0
    else:
        duty = st.prev_output if st.initialized else 0.0
    return duty, replace(st, prev_output=duty, initialized=True, fault=False)


def pid_step(
    measured_c: float,
    cfg: ControllerConfig,
    st: ControllerState,
    dt: float,
) -> tuple[float, ControllerState]:
    """Positional PID clamped to [0, 1].

    raw = kp*e + ki*integral + kd*(e - prev_e)/dt. The integral only
    accumulates while the output is unsaturated or the error is pulling
    it back out of saturation, so a long saturated excursion cannot wind
    it up. The first call uses a zero derivative.
    """
    if not (math.isfinite(dt) and dt > 0):
        raise ValueError(f"dt must be > 0, got {dt}")
    if not math.isfinite(measured_c):
        return st.prev_output, replace(st, fault=True)

    error = cfg.setpoint_c - measured_c
    derivative = 0.0 if not st.initialized else (error - st.prev_error) / dt
    raw = cfg.kp * error + cfg.ki * st.integral + cfg.kd * derivative

    integral = st.integral
    if 0.0 < raw < 1.0 or (raw >= 1.0 and error < 0.0) or (raw <= 0.0 and error > 0.0):
        integral += error * dt

    duty = min(1.0, max(0.0, raw))
    next_st = replace(
        st,
        prev_output=duty,
        integral=integral,
        prev_error=error,
        initialized=True,
        fault=False,
    )
    return duty, next_st


def humidifier_step(measured_rh: float, cfg: ControllerConfig, st: ControllerState) -> tuple[float, ControllerState]:
    """On-off humidifier on the RH reading, same law as the heater."""
    return onoff_step(measured_rh, cfg, st, setpoint=cfg.hum_setpoint_pct, hysteresis=cfg.hum_hysteresis_pct)
