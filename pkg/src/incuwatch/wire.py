"""Wire formats shared by the device agent, the telemetry service and the dashboard.

Covers the four byte formats of the platform:

- the form-encoded telemetry update posted to ``/update``
- the ``feeds.json`` document returned by feed queries
- the ``key=value&...`` command body used for remote control
- the ISO-8601 UTC timestamps used everywhere (second resolution, trailing Z)

Field values travel as verbatim strings end to end; numeric parsing is a
view on top. That is what makes stored logs byte-exact under replay.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional

FIELD_KEYS = ("field1", "field2", "field3", "field4", "field5", "field6", "field7", "field8")

# Fixed channel layout: which physical quantity rides in which field.
FIELD_MAP = {
    "field1": "air_temp",
    "field2": "rh",
    "field3": "pulse_bpm",
    "field4": "gas_adc",
    "field5": "light_lux",
    "field6": "skin_temp",
    "field7": "heater_duty",
    # field8 reserved
}

TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%SZ"

COMMAND_KEYS = ("setpoint", "servo", "mode", "hum_setpoint")

SETPOINT_RANGE_C = (20.0, 40.0)
HUM_SETPOINT_RANGE_PCT = (20.0, 80.0)
SERVO_MODES = ("air", "skin")
CONTROL_MODES = ("onoff", "pid")


class WireError(ValueError):
    """Malformed or invalid wire data."""


class AuthShapeError(WireError):
    """Request is missing its api_key."""


class CommandValidationError(WireError):
    """Command body failed validation; never reaches the device."""


def format_timestamp(ts: datetime) -> str:
    """Render a timestamp as ISO-8601 UTC with second resolution and trailing Z."""
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).strftime(TIMESTAMP_FORMAT)


def parse_timestamp(text: str) -> datetime:
    """Parse YYYY-MM-DDTHH:MM:SSZ. Offsets or sub-second digits are rejected."""
    try:
        ts = datetime.strptime(text, TIMESTAMP_FORMAT)
    except ValueError as exc:
        raise WireError(f"bad timestamp {text!r}: expected YYYY-MM-DDTHH:MM:SSZ") from exc
    return ts.replace(tzinfo=timezone.utc)


@dataclass
class SensorFrame:
    """One tick's worth of sensor readings from a terminal device.

    created_at is None in realtime mode (the server stamps on arrival).
    """

    created_at: Optional[datetime]
    air_temp: float    # °C
    rh: float          # %RH
    pulse_bpm: int
    gas_adc: int       # 0..1023
    light_lux: int
    skin_temp: float   # °C
    heater_duty: float  # fraction 0..1

    def field_strings(self) -> dict[str, str]:
        """Render field1..field7 the way the device puts them on the wire.

        Floats carry exactly one decimal place, integers go bare.
        """
        return {
            "field1": _render_float(self.air_temp),
            "field2": _render_float(self.rh),
            "field3": str(int(self.pulse_bpm)),
            "field4": str(int(self.gas_adc)),
            "field5": str(int(self.light_lux)),
            "field6": _render_float(self.skin_temp),
            "field7": _render_float(self.heater_duty),
        }


def _render_float(value: float) -> str:
    return f"{value:.1f}"


def _check_finite(frame: SensorFrame) -> None:
    for name in ("air_temp", "rh", "skin_temp", "heater_duty"):
        if not math.isfinite(getattr(frame, name)):
            raise WireError(f"non-finite {name} in frame")


def encode_update(frame: SensorFrame, api_key: str) -> tuple[str, str, str]:
    """Build the (method, path, body) triple for a telemetry POST.

    Body shape: api_key=<k>&field1=..&..&field7=..[&created_at=<ts>].
    Values are emitted raw (no percent escaping); nothing we emit needs it.
    """
    if not api_key:
        raise WireError("api_key must be nonempty")
    _check_finite(frame)
    parts = [f"api_key={api_key}"]
    for key, value in frame.field_strings().items():
        parts.append(f"{key}={value}")
    if frame.created_at is not None:
        parts.append(f"created_at={format_timestamp(frame.created_at)}")
    return ("POST", "/update", "&".join(parts))


@dataclass
class ParsedUpdate:
    """Decoded /update body: verbatim field strings plus numeric views."""

    api_key: str
    fields: dict[str, str] = field(default_factory=dict)
    created_at: Optional[datetime] = None

    def numeric(self, key: str) -> Optional[float]:
        """The field parsed as a number, or None when absent/unparsable."""
        raw = self.fields.get(key)
        if raw is None:
            return None
        try:
            value = float(raw)
        except ValueError:
            return None
        return value if math.isfinite(value) else None


def parse_update(body: str) -> ParsedUpdate:
    """Decode an /update body by splitting on '&' and '='.

    Values are kept verbatim (no percent or plus decoding) so stored
    strings round-trip byte-exactly. Unknown keys are ignored, missing
    fields are fine (sparse updates), duplicate keys resolve last-wins.
    A missing api_key is an auth-shape error; a present but malformed
    created_at is a format error.
    """
    merged: dict[str, str] = {}
    for part in body.split("&"):
        if not part:
            continue
        key, _, value = part.partition("=")
        merged[key] = value
    api_key = merged.get("api_key")
    if not api_key:
        raise AuthShapeError("missing api_key")
    fields = {key: merged[key] for key in FIELD_KEYS if key in merged}
    created_at = None
    if "created_at" in merged:
        created_at = parse_timestamp(merged["created_at"])
    return ParsedUpdate(api_key=api_key, fields=fields, created_at=created_at)


@dataclass
class FeedEntry:
    """One persisted telemetry record. Field values are verbatim strings."""

    entry_id: int
    created_at: datetime
    fields: dict[str, str] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        doc: dict = {
            "created_at": format_timestamp(self.created_at),
            "entry_id": self.entry_id,
        }
        for key in FIELD_KEYS:
            doc[key] = self.fields.get(key)
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "FeedEntry":
        try:
            entry_id = int(doc["entry_id"])
            created_at = parse_timestamp(doc["created_at"])
        except (KeyError, TypeError) as exc:
            raise WireError(f"bad feed entry: {exc}") from exc
        fields = {}
        for key in FIELD_KEYS:
            value = doc.get(key)
            if value is not None:
                if not isinstance(value, str):
                    raise WireError(f"feed entry {key} must be a string or null")
                fields[key] = value
        return cls(entry_id=entry_id, created_at=created_at, fields=fields)


def encode_feeds(channel_meta: dict, entries: list[FeedEntry]) -> str:
    """Serialize a feeds.json document. Stable: same input, same bytes.

    channel_meta carries id, name and created_at (already ISO-formatted
    or datetime). Absent fields appear as explicit nulls.
    """
    created = channel_meta.get("created_at")
    if isinstance(created, datetime):
        created = format_timestamp(created)
    doc = {
        "channel": {
            "id": channel_meta["id"],
            "name": channel_meta.get("name", ""),
            "created_at": created,
        },
        "feeds": [entry.to_json_dict() for entry in entries],
    }
    return json.dumps(doc, separators=(",", ":"))


@dataclass
class Command:
    """A queued remote-control instruction for one channel."""

    command_id: int
    body: str
    created_at: datetime
    consumed: bool = False

    def to_json_dict(self) -> dict:
        return {
            "command_id": self.command_id,
            "body": self.body,
            "created_at": format_timestamp(self.created_at),
        }


def parse_command_body(body: str) -> dict:
    """Validate and decode a command body of '&'-joined key=value pairs.

    Known keys: setpoint (20..40 °C), hum_setpoint (20..80 %RH),
    servo (air|skin), mode (onoff|pid). Anything else is rejected so a
    bad command dies at POST time, never at the device.
    """
    if not body:
        raise CommandValidationError("empty command body")
    result: dict = {}
    for part in body.split("&"):
        if "=" not in part:
            raise CommandValidationError(f"bad command pair {part!r}")
        key, _, raw = part.partition("=")
        if key == "setpoint":
            result[key] = _parse_ranged_float(key, raw, SETPOINT_RANGE_C)
        elif key == "hum_setpoint":
            result[key] = _parse_ranged_float(key, raw, HUM_SETPOINT_RANGE_PCT)
        elif key == "servo":
            if raw not in SERVO_MODES:
                raise CommandValidationError(f"servo must be one of {SERVO_MODES}, got {raw!r}")
            result[key] = raw
        elif key == "mode":
            if raw not in CONTROL_MODES:
                raise CommandValidationError(f"mode must be one of {CONTROL_MODES}, got {raw!r}")
            result[key] = raw
        else:
            raise CommandValidationError(f"unknown command key {key!r}")
    return result


def _parse_ranged_float(key: str, raw: str, bounds: tuple[float, float]) -> float:
    try:
        value = float(raw)
    except ValueError as exc:
        raise CommandValidationError(f"{key} is not a number: {raw!r}") from exc
    lo, hi = bounds
    if not math.isfinite(value) or not (lo <= value <= hi):
        raise CommandValidationError(f"{key}={raw} outside [{lo}, {hi}]")
    return value
