"""Lumped-parameter model of the incubator microclimate and the neonate.

Two thermal nodes (canopy air, infant skin) plus a first-order humidity
balance, integrated with explicit Euler so a run is bit-reproducible:

    air'  = air  + dt * (duty*P_h - k_loss*(air - T_amb) - k_ib*(air - skin)) / C_air
    skin' = skin + dt * (q_m + k_ib*(air - skin)) / C_ib
    rh'   = rh   + dt * (hum_duty*hum_gain - (rh - RH_amb) / tau_rh)   clamped to [0, 100]

Gas, light and heart-rate baseline live in the state too but are touched
only by scenario events (leaks, phototherapy, bradycardia), never by the
thermal step. Sensor sampling adds Gaussian noise and quantization on top,
driven by a caller-owned RNG so identical seeds give identical frames.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, replace
from datetime import datetime, timedelta
from typing import Optional

from .wire import SensorFrame

EVENT_KINDS = (
    "gas_leak",
    "door_open",
    "heater_stuck_on",
    "heater_stuck_off",
    "bradycardia",
    "phototherapy_light",
)

GAS_RAMP_S = 30.0       # gas leaks build up over this long before holding
GAS_ADC_MAX = 1023
HR_WOBBLE_BPM = 5.0     # sinusoidal heart-rate variability amplitude
HR_WOBBLE_PERIOD_S = 60.0


class ScenarioError(ValueError):
    """Bad scenario script; raised at load time, never mid-simulation."""


@dataclass(frozen=True)
class PlantParams:
    """Physical constants of one incubator plus its ambient conditions."""

    heater_power_w: float = 150.0
    air_heat_capacity: float = 4000.0    # J/K
    loss_conductance: float = 5.0        # W/K, air -> ambient
    infant_conductance: float = 1.5      # W/K, air <-> skin
    infant_heat_capacity: float = 10000.0  # J/K
    metabolic_heat_w: float = 3.0
    ambient_temp_c: float = 24.0
    ambient_rh_pct: float = 45.0
    rh_time_constant_s: float = 600.0
    humidifier_gain: float = 0.05        # %RH/s at full duty
    # Set by apply_events while a heater_stuck_* event is active; the
    # device agent applies it in place of the controller output.
    forced_heater_duty: Optional[float] = None

    def validate(self) -> None:
        positive = (
            ("air_heat_capacity", self.air_heat_capacity),
            ("loss_conductance", self.loss_conductance),
            ("infant_conductance", self.infant_conductance),
            ("infant_heat_capacity", self.infant_heat_capacity),
            ("rh_time_constant_s", self.rh_time_constant_s),
        )
        for name, value in positive:
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be strictly positive, got {value}")
        if not (math.isfinite(self.heater_power_w) and self.heater_power_w >= 0):
            raise ValueError(f"heater_power_w must be >= 0, got {self.heater_power_w}")
        if not (0.0 <= self.ambient_rh_pct <= 100.0):
            raise ValueError(f"ambient_rh_pct must be in [0, 100], got {self.ambient_rh_pct}")
        for name in ("metabolic_heat_w", "ambient_temp_c", "humidifier_gain"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


@dataclass(frozen=True)
class PlantState:
    """Continuous physical state of one incubator at sim time t."""

    t: float = 0.0            # s
    air_temp_c: float = 24.0
    skin_temp_c: float = 37.0  # the neonate arrives at body temperature
    rh_pct: float = 45.0
    gas_adc: float = 120.0    # 0..1023
    light_lux: float = 200.0
    hr_baseline_bpm: float = 130.0

    def validate(self) -> None:
        for name in ("t", "air_temp_c", "skin_temp_c", "rh_pct", "gas_adc", "light_lux", "hr_baseline_bpm"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not (0.0 <= self.rh_pct <= 100.0):
            raise ValueError(f"rh_pct must be in [0, 100], got {self.rh_pct}")
        if not (0 <= self.gas_adc <= GAS_ADC_MAX):
            raise ValueError(f"gas_adc must be in [0, {GAS_ADC_MAX}], got {self.gas_adc}")
        if self.light_lux < 0:
            raise ValueError(f"light_lux must be >= 0, got {self.light_lux}")
        if self.hr_baseline_bpm <= 0:
            raise ValueError(f"hr_baseline_bpm must be > 0, got {self.hr_baseline_bpm}")


def initial_state(params: PlantParams) -> PlantState:
    """State of a just-switched-on incubator: cold air, warm infant."""
    return PlantState(air_temp_c=params.ambient_temp_c, rh_pct=params.ambient_rh_pct)


@dataclass(frozen=True)
class ScenarioEvent:
    """One scripted fault or disturbance. duration_s == 0 means permanent."""

    at_s: float
    kind: str
    magnitude: float
    duration_s: float = 0.0

    def validate(self) -> None:
        if self.kind not in EVENT_KINDS:
            raise ScenarioError(f"unknown event kind {self.kind!r}; expected one of {EVENT_KINDS}")
        if not (math.isfinite(self.at_s) and self.at_s >= 0):
            raise ScenarioError(f"at_s must be >= 0, got {self.at_s}")
        if not (math.isfinite(self.duration_s) and self.duration_s >= 0):
            raise ScenarioError(f"duration_s must be >= 0, got {self.duration_s}")
        if not math.isfinite(self.magnitude):
            raise ScenarioError("magnitude must be finite")

    def active_at(self, t: float) -> bool:
        if t < self.at_s:
            return False
        return self.duration_s == 0.0 or t < self.at_s + self.duration_s


def load_scenario(records: list) -> list[ScenarioEvent]:
    """Build a validated, at_s-sorted event script from parsed JSON records."""
    events = []
    for record in records:
        if not isinstance(record, dict):
            raise ScenarioError(f"scenario entries must be objects, got {record!r}")
        unknown = set(record) - {"at_s", "kind", "magnitude", "duration_s"}
        if unknown:
            raise ScenarioError(f"unknown scenario keys {sorted(unknown)}")
        try:
            event = ScenarioEvent(
                at_s=float(record["at_s"]),
                kind=record["kind"],
                magnitude=float(record["magnitude"]),
                duration_s=float(record.get("duration_s", 0.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(f"bad scenario record {record!r}: {exc}") from exc
        event.validate()
        events.append(event)
    return sorted(events, key=lambda e: e.at_s)


@dataclass(frozen=True)
class SensorModelConfig:
    """Quantization and noise model of the sensor suite, plus the seed."""

    sample_period_s: float = 1.0
    temp_quantum_c: float = 0.1
    rh_quantum_pct: float = 0.5
    temp_noise_sd: float = 0.05
    rh_noise_sd: float = 0.5
    hr_noise_sd: float = 2.0
    gas_noise_sd: float = 10.0
    light_noise_sd: float = 20.0
    rng_seed: int = 0

    def validate(self) -> None:
        if not (math.isfinite(self.sample_period_s) and self.sample_period_s > 0):
            raise ValueError(f"sample_period_s must be > 0, got {self.sample_period_s}")
        for name in ("temp_quantum_c", "rh_quantum_pct"):
            if not (math.isfinite(getattr(self, name)) and getattr(self, name) > 0):
                raise ValueError(f"{name} must be > 0")
        for name in ("temp_noise_sd", "rh_noise_sd", "hr_noise_sd", "gas_noise_sd", "light_noise_sd"):
            if not (math.isfinite(getattr(self, name)) and getattr(self, name) >= 0):
                raise ValueError(f"{name} must be >= 0")


def step_plant(
    state: PlantState,
    params: PlantParams,
    heater_duty: float,
    humidifier_duty: float,
    dt: float,
) -> PlantState:
    """Advance the thermal/humidity state by one explicit-Euler step.

    Pure: gas, light and heart-rate baseline pass through untouched.
    """
    if not (math.isfinite(dt) and dt > 0):
        raise ValueError(f"dt must be > 0, got {dt}")
    for name, duty in (("heater_duty", heater_duty), ("humidifier_duty", humidifier_duty)):
        if not (math.isfinite(duty) and 0.0 <= duty <= 1.0):
            raise ValueError(f"{name} must be in [0, 1], got {duty}")
    state.validate()
    params.validate()

    air = state.air_temp_c
    skin = state.skin_temp_c
    coupling = params.infant_conductance * (air - skin)
    air_next = air + dt * (
        heater_duty * params.heater_power_w
        - params.loss_conductance * (air - params.ambient_temp_c)
        - coupling
    ) / params.air_heat_capacity
    skin_next = skin + dt * (params.metabolic_heat_w + coupling) / params.infant_heat_capacity
    rh_next = state.rh_pct + dt * (
        humidifier_duty * params.humidifier_gain
        - (state.rh_pct - params.ambient_rh_pct) / params.rh_time_constant_s
    )
    rh_next = min(100.0, max(0.0, rh_next))

    return replace(state, t=state.t + dt, air_temp_c=air_next, skin_temp_c=skin_next, rh_pct=rh_next)


def steady_state(params: PlantParams, heater_duty: float) -> tuple[float, float]:
    """Analytic fixed point of the thermal equations at constant duty.

    air  = T_amb + (duty*P_h + q_m) / k_loss
    skin = air + q_m / k_ib
    """
    params.validate()
    if not (math.isfinite(heater_duty) and 0.0 <= heater_duty <= 1.0):
        raise ValueError(f"heater_duty must be in [0, 1], got {heater_duty}")
    air = params.ambient_temp_c + (
        heater_duty * params.heater_power_w + params.metabolic_heat_w
    ) / params.loss_conductance
    skin = air + params.metabolic_heat_w / params.infant_conductance
    return (air, skin)


def apply_events(
    state: PlantState,
    params: PlantParams,
    script: list[ScenarioEvent],
    t: float,
) -> tuple[PlantState, PlantParams]:
    """Overlay the effect of all events active at time t.

    The inputs hold baseline values; the returned copies carry the
    effective ones, so expired events restore baselines for free. Later
    events of the same kind win when windows overlap.
    """
    eff_state = state
    eff_params = params
    for event in script:
        if not event.active_at(t):
            continue
        if event.kind == "gas_leak":
            elapsed = t - event.at_s
            ramp = min(elapsed, GAS_RAMP_S) / GAS_RAMP_S
            gas = state.gas_adc + (event.magnitude - state.gas_adc) * ramp
            eff_state = replace(eff_state, gas_adc=min(float(GAS_ADC_MAX), max(0.0, gas)))
        elif event.kind == "door_open":
            eff_params = replace(
                eff_params,
                loss_conductance=eff_params.loss_conductance + event.magnitude,
            )
        elif event.kind == "heater_stuck_on":
            eff_params = replace(eff_params, forced_heater_duty=1.0)
        elif event.kind == "heater_stuck_off":
            eff_params = replace(eff_params, forced_heater_duty=0.0)
        elif event.kind == "bradycardia":
            eff_state = replace(eff_state, hr_baseline_bpm=event.magnitude)
        elif event.kind == "phototherapy_light":
            eff_state = replace(eff_state, light_lux=event.magnitude)
    return (eff_state, eff_params)


def quantize(value: float, quantum: float) -> float:
    """Snap to the nearest multiple of quantum, ties away from zero."""
    steps = math.floor(abs(value) / quantum + 0.5)
    return round(math.copysign(steps * quantum, value), 10)


def _round_half_away(value: float) -> int:
    return int(math.copysign(math.floor(abs(value) + 0.5), value))


def sample_sensors(
    state: PlantState,
    cfg: SensorModelConfig,
    rng: random.Random,
    heater_duty: float = 0.0,
    epoch: Optional[datetime] = None,
) -> SensorFrame:
    """Read the sensor suite once.

    Air/skin temperature and RH get additive Gaussian noise then snap to
    their quanta; heart rate wobbles on a 60 s sinusoid around its
    baseline; gas and light are noised, clamped to their valid ranges and
    rounded to integers. Noise draws always happen in the same order
    (air, rh, skin, hr, gas, light) so a seed fixes the whole sequence.

    epoch anchors sim time to wall time; None leaves created_at unset so
    the server stamps on arrival.
    """
    cfg.validate()
    state.validate()

    air = quantize(state.air_temp_c + rng.gauss(0.0, cfg.temp_noise_sd), cfg.temp_quantum_c)
    rh = quantize(state.rh_pct + rng.gauss(0.0, cfg.rh_noise_sd), cfg.rh_quantum_pct)
    rh = min(100.0, max(0.0, rh))
    skin = quantize(state.skin_temp_c + rng.gauss(0.0, cfg.temp_noise_sd), cfg.temp_quantum_c)
    wobble = HR_WOBBLE_BPM * math.sin(2.0 * math.pi * state.t / HR_WOBBLE_PERIOD_S)
    hr = _round_half_away(state.hr_baseline_bpm + wobble + rng.gauss(0.0, cfg.hr_noise_sd))
    gas = _round_half_away(min(float(GAS_ADC_MAX), max(0.0, state.gas_adc + rng.gauss(0.0, cfg.gas_noise_sd))))
    light = _round_half_away(max(0.0, state.light_lux + rng.gauss(0.0, cfg.light_noise_sd)))

    created_at = None
    if epoch is not None:
        created_at = epoch + timedelta(seconds=state.t)
    return SensorFrame(
        created_at=created_at,
        air_temp=air,
        rh=rh,
        pulse_bpm=max(0, hr),
        gas_adc=gas,
        light_lux=light,
        skin_temp=skin,
        heater_duty=heater_duty,
    )
