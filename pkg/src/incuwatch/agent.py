"""The terminal device: plant, sensors and controller in a timed loop.

Each tick runs events -> control -> plant -> sample -> post. The sample
reflects the post-step state (a sensor read at tick end) and feeds the
next tick's control step; the very first tick controls off a pre-run
sample of the initial state, which is never posted. Every Nth tick the
agent polls the command queue and applies one validated command to its
controller config.

With clock="simulated" the loop free-runs, stamps every update with
created_at from a fixed epoch, and is bit-reproducible for a given seed;
clock="realtime" sleeps dt per tick and lets the server stamp arrivals.

Failed posts (network trouble, not server verdicts) are buffered up to
1000 frames and retried in order ahead of the next tick's frame; overflow
drops the oldest and counts it.
"""

from __future__ import annotations

import json
import logging
import random
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from .control import ControllerConfig, ControllerState, humidifier_step, onoff_step, pid_step
from .hub import ConfigError, Hub
from .plant import (
    PlantParams,
    PlantState,
    ScenarioEvent,
    SensorModelConfig,
    apply_events,
    initial_state,
    load_scenario,
    sample_sensors,
    step_plant,
)
from .wire import (
    CommandValidationError,
    FeedEntry,
    SensorFrame,
    encode_update,
    parse_command_body,
    parse_timestamp,
)

log = logging.getLogger(__name__)

SIM_EPOCH = "2026-01-01T00:00:00Z"
POST_BUFFER_LIMIT = 1000


class TransportError(Exception):
    """Could not reach the server at all; the frame stays buffered."""


class HttpTransport:
    """Talks the service's HTTP API over the network."""

    def __init__(self, server_url: str, timeout_s: float = 5.0):
        self.server_url = server_url.rstrip("/")
        self.timeout_s = timeout_s

    def post_update(self, body: str) -> tuple[int, str]:
        request = urllib.request.Request(
            f"{self.server_url}/update", data=body.encode("utf-8"), method="POST"
        )
        try:
            with urllib.request.urlopen(request, timeout=self.timeout_s) as response:
                return response.status, response.read().decode("utf-8")
        except urllib.error.HTTPError as exc:
            return exc.code, exc.read().decode("utf-8", errors="replace")
        except (urllib.error.URLError, OSError) as exc:
            raise TransportError(str(exc)) from exc

    def poll_command(self, channel_id: int, write_key: str) -> Optional[dict]:
        url = f"{self.server_url}/channels/{channel_id}/commands/next?api_key={write_key}"
        try:
            with urllib.request.urlopen(url, timeout=self.timeout_s) as response:
                if response.status == 204:
                    return None
                return json.loads(response.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            log.warning("command poll rejected: %d %s", exc.code, exc.reason)
            return None
        except (urllib.error.URLError, OSError) as exc:
            raise TransportError(str(exc)) from exc


class LocalTransport:
    """Calls an in-process hub directly; used by all-in-one runs and tests."""

    def __init__(self, hub: Hub):
        self.hub = hub

    def post_update(self, body: str) -> tuple[int, str]:
        response = self.hub.handle_update(body)
        return response.status, response.body

    def poll_command(self, channel_id: int, write_key: str) -> Optional[dict]:
        response = self.hub.poll_command(channel_id, write_key)
        if response.status != 200:
            return None
        return json.loads(response.body)


@dataclass
class AgentConfig:
    channel_id: int
    write_key: str
    server_url: Optional[str] = None
    seed: int = 0
    dt_s: float = 1.0
    duration_s: float = 60.0
    clock: str = "simulated"  # simulated | realtime
    start_time: str = SIM_EPOCH
    command_poll_every_n_ticks: int = 5
    # wall seconds slept per tick; None means 0 for simulated clock and
    # dt_s for realtime. Small values play a simulated run out live
    # (accelerated) for dashboard demos without losing determinism.
    pace_s: Optional[float] = None
    local_log: Optional[str] = None
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    plant: PlantParams = field(default_factory=PlantParams)
    sensors: SensorModelConfig = field(default_factory=SensorModelConfig)
    scenario: list[ScenarioEvent] = field(default_factory=list)

    def validate(self) -> None:
        if self.dt_s <= 0:
            raise ConfigError(f"dt_s must be > 0, got {self.dt_s}")
        if self.duration_s <= 0:
            raise ConfigError(f"duration_s must be > 0, got {self.duration_s}")
        if self.clock not in ("simulated", "realtime"):
            raise ConfigError(f"clock must be simulated or realtime, got {self.clock!r}")
        if self.command_poll_every_n_ticks < 1:
            raise ConfigError("command_poll_every_n_ticks must be >= 1")
        if self.pace_s is not None and self.pace_s < 0:
            raise ConfigError(f"pace_s must be >= 0, got {self.pace_s}")
        try:
            self.controller.validate()
            self.plant.validate()
            self.sensors.validate()
            parse_timestamp(self.start_time)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class RunSummary:
    ticks: int = 0
    accepted: int = 0
    rate_limited: int = 0
    rejected: int = 0
    dropped: int = 0
    unsent: int = 0
    applied_commands: list[str] = field(default_factory=list)
    final_state: Optional[PlantState] = None

    def to_json_dict(self) -> dict:
        doc = {
            "ticks": self.ticks,
            "accepted": self.accepted,
            "rate_limited": self.rate_limited,
            "rejected": self.rejected,
            "dropped": self.dropped,
            "unsent": self.unsent,
            "applied_commands": self.applied_commands,
        }
        if self.final_state is not None:
            doc["final_state"] = {
                "t": self.final_state.t,
                "air_temp_c": round(self.final_state.air_temp_c, 6),
                "skin_temp_c": round(self.final_state.skin_temp_c, 6),
                "rh_pct": round(self.final_state.rh_pct, 6),
            }
        return doc


class DeviceLoop:
    """One device's deterministic tick engine, transport-free.

    run_agent drives it against a server; acceptance checks drive it
    directly.
    """

    def __init__(self, cfg: AgentConfig):
        cfg.validate()
        self.cfg = cfg
        self.params = cfg.plant
        self.state = initial_state(cfg.plant)
        self.rng = random.Random(cfg.seed)
        self.controller = cfg.controller
        self.heater_state = ControllerState()
        self.hum_state = ControllerState()
        self.epoch = parse_timestamp(cfg.start_time) if cfg.clock == "simulated" else None
        # pre-run sensor read of the initial state; feeds tick 1's control
        self.last_frame = sample_sensors(self.state, cfg.sensors, self.rng, 0.0, self.epoch)
        self.last_duty = 0.0
        self.last_hum_duty = 0.0

    def tick(self) -> SensorFrame:
        cfg = self.cfg
        eff_state, eff_params = apply_events(self.state, self.params, cfg.scenario, self.state.t)

        measured = self.last_frame.skin_temp if self.controller.servo == "skin" else self.last_frame.air_temp
        if self.controller.mode == "pid":
            duty, self.heater_state = pid_step(measured, self.controller, self.heater_state, cfg.dt_s)
        else:
            duty, self.heater_state = onoff_step(measured, self.controller, self.heater_state)
        if eff_params.forced_heater_duty is not None:
            duty = eff_params.forced_heater_duty
        hum_duty, self.hum_state = humidifier_step(self.last_frame.rh, self.controller, self.hum_state)

        self.state = step_plant(self.state, eff_params, duty, hum_duty, cfg.dt_s)
        sampled = replace(
            self.state,
            gas_adc=eff_state.gas_adc,
            light_lux=eff_state.light_lux,
            hr_baseline_bpm=eff_state.hr_baseline_bpm,
        )
        frame = sample_sensors(sampled, cfg.sensors, self.rng, duty, self.epoch)
        self.last_frame = frame
        self.last_duty = duty
        self.last_hum_duty = hum_duty
        return frame

    def apply_command(self, body: str) -> None:
        """Re-validate and fold a delivered command into the controller."""
        parsed = parse_command_body(body)  # raises on anything out of range
        updates = {}
        if "setpoint" in parsed:
            updates["setpoint_c"] = parsed["setpoint"]
        if "hum_setpoint" in parsed:
            updates["hum_setpoint_pct"] = parsed["hum_setpoint"]
        if "servo" in parsed:
            updates["servo"] = parsed["servo"]
        if "mode" in parsed:
            updates["mode"] = parsed["mode"]
        self.controller = replace(self.controller, **updates)


def run_agent(cfg: AgentConfig, transport=None) -> RunSummary:
    """Run one device against a server until duration_s of sim time."""
    loop = DeviceLoop(cfg)
    if transport is None:
        if not cfg.server_url:
            raise ConfigError("agent needs a server_url (or an injected transport)")
        transport = HttpTransport(cfg.server_url)

    summary = RunSummary()
    pending: list[SensorFrame] = []
    records: list[FeedEntry] = []
    ticks = int(round(cfg.duration_s / cfg.dt_s))
    for tick in range(1, ticks + 1):
        frame = loop.tick()
        summary.ticks += 1
        records.append(_log_record(frame, len(records) + 1))

        pending.append(frame)
        if len(pending) > POST_BUFFER_LIMIT:
            pending.pop(0)
            summary.dropped += 1
        while pending:
            _, _, body = encode_update(pending[0], cfg.write_key)
            try:
                status, text = transport.post_update(body)
            except TransportError as exc:
                log.warning("post failed, %d frame(s) buffered: %s", len(pending), exc)
                break
            pending.pop(0)
            if status == 200:
                summary.accepted += 1
            elif status == 429:
                summary.rate_limited += 1
            else:
                summary.rejected += 1
                log.warning("update rejected: %d %s", status, text)

        if tick % cfg.command_poll_every_n_ticks == 0:
            try:
                command = transport.poll_command(cfg.channel_id, cfg.write_key)
            except TransportError as exc:
                log.warning("command poll failed: %s", exc)
                command = None
            if command is not None:
                try:
                    loop.apply_command(command["body"])
                    summary.applied_commands.append(command["body"])
                except CommandValidationError as exc:
                    log.error("dropping invalid command %r: %s", command, exc)

        pace = cfg.pace_s
        if pace is None:
            pace = cfg.dt_s if cfg.clock == "realtime" else 0.0
        if pace > 0:
            time.sleep(pace)

    summary.unsent = len(pending)
    summary.final_state = loop.state
    if cfg.local_log:
        write_local_log(records, cfg.local_log)
    return summary


def _log_record(frame: SensorFrame, entry_id: int) -> FeedEntry:
    created = frame.created_at
    if created is None:
        created = datetime.now(timezone.utc).replace(microsecond=0)
    return FeedEntry(entry_id=entry_id, created_at=created, fields=frame.field_strings())


def write_local_log(records: list[FeedEntry], path: str | Path) -> None:
    """NDJSON mirror of what the server store would hold for this run."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_json_dict(), separators=(",", ":")) + "\n")
        fh.flush()


def parse_agent_config(doc: dict, base_dir: Optional[Path] = None) -> AgentConfig:
    """Build an AgentConfig from parsed JSON (the device config file)."""
    if not isinstance(doc, dict):
        raise ConfigError("agent config must be a JSON object")
    known = {
        "channel_id", "write_key", "server_url", "seed", "dt_s", "duration_s",
        "clock", "start_time", "command_poll_every_n_ticks", "pace_s", "local_log",
        "controller", "plant", "sensors", "scenario", "scenario_file",
    }
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown agent config keys {sorted(unknown)}")
    if "scenario" in doc and "scenario_file" in doc:
        raise ConfigError("give either scenario or scenario_file, not both")

    scenario: list[ScenarioEvent] = []
    try:
        if "scenario" in doc:
            scenario = load_scenario(doc["scenario"])
        elif "scenario_file" in doc:
            scenario_path = Path(doc["scenario_file"])
            if base_dir is not None and not scenario_path.is_absolute():
                scenario_path = base_dir / scenario_path
            scenario = load_scenario(json.loads(scenario_path.read_text()))
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        raise ConfigError(f"bad scenario: {exc}") from exc

    try:
        cfg = AgentConfig(
            channel_id=int(doc["channel_id"]),
            write_key=str(doc["write_key"]),
            server_url=doc.get("server_url"),
            seed=int(doc.get("seed", 0)),
            dt_s=float(doc.get("dt_s", 1.0)),
            duration_s=float(doc.get("duration_s", 60.0)),
            clock=doc.get("clock", "simulated"),
            start_time=doc.get("start_time", SIM_EPOCH),
            command_poll_every_n_ticks=int(doc.get("command_poll_every_n_ticks", 5)),
            pace_s=float(doc["pace_s"]) if doc.get("pace_s") is not None else None,
            local_log=doc.get("local_log"),
            controller=_dataclass_from(ControllerConfig, doc.get("controller", {}), "controller"),
            plant=_dataclass_from(PlantParams, doc.get("plant", {}), "plant"),
            sensors=_dataclass_from(SensorModelConfig, doc.get("sensors", {}), "sensors"),
            scenario=scenario,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad agent config: {exc}") from exc
    cfg.validate()
    return cfg


def _dataclass_from(cls, doc: dict, what: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{what} must be an object")
    valid = {f.name for f in cls.__dataclass_fields__.values()}
    unknown = set(doc) - valid
    if unknown:
        raise ConfigError(f"unknown {what} keys {sorted(unknown)}")
    return cls(**doc)
