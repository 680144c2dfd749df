"""Threshold alerting: per-field rules, debounced lifecycle, notification sinks.

Every accepted update runs through ChannelAlertEngine.evaluate_update on
the ingest path. A rule raises after debounce_n consecutive out-of-band
samples and resolves after clear_n consecutive in-band ones; at most one
non-resolved alert exists per rule at a time. Transitions fan out to a
log sink (always) and an optional webhook sink via a background
dispatcher, so a slow or dead notification target never stalls ingestion.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import Optional

from .wire import FIELD_KEYS, format_timestamp

log = logging.getLogger(__name__)

SEVERITIES = ("warning", "critical")

PENDING = "PENDING"
ACTIVE = "ACTIVE"
ACKNOWLEDGED = "ACKNOWLEDGED"
RESOLVED = "RESOLVED"


class AlertError(Exception):
    pass


class AlertNotFound(AlertError):
    pass


class AlertConflict(AlertError):
    """Illegal lifecycle transition, e.g. acking a resolved alert."""


@dataclass(frozen=True)
class AlertRule:
    field: str
    lower: Optional[float] = None
    upper: Optional[float] = None
    debounce_n: int = 3
    clear_n: int = 5
    severity: str = "warning"
    label: str = ""

    def validate(self) -> None:
        if self.field not in FIELD_KEYS:
            raise ValueError(f"rule field must be one of {FIELD_KEYS}, got {self.field!r}")
        if self.lower is None and self.upper is None:
            raise ValueError(f"rule {self.label!r}: at least one of lower/upper required")
        if self.lower is not None and self.upper is not None and not (self.lower < self.upper):
            raise ValueError(f"rule {self.label!r}: lower must be < upper")
        if self.debounce_n < 1 or self.clear_n < 1:
            raise ValueError(f"rule {self.label!r}: debounce_n and clear_n must be >= 1")
        if self.severity not in SEVERITIES:
            raise ValueError(f"rule {self.label!r}: severity must be one of {SEVERITIES}")

    def in_band(self, value: float) -> bool:
        if self.lower is not None and value < self.lower:
            return False
        if self.upper is not None and value > self.upper:
            return False
        return True


# Rule set applied when a channel's config does not name its own.
# Skin temperature carries the clinical band; the rest bracket the
# operating point of the default plant and sensors.
DEFAULT_RULES = (
    AlertRule(field="field6", lower=36.5, upper=37.2, severity="critical", label="skin-temp"),
    AlertRule(field="field1", lower=34.0, upper=36.0, severity="warning", label="air-temp"),
    AlertRule(field="field2", lower=40.0, upper=60.0, severity="warning", label="humidity"),
    AlertRule(field="field3", lower=100.0, upper=180.0, severity="critical", label="pulse"),
    AlertRule(field="field4", upper=300.0, severity="critical", label="gas"),
    AlertRule(field="field5", upper=1000.0, severity="warning", label="light"),
)


@dataclass
class Alert:
    alert_id: int
    channel_id: int
    label: str
    field: str
    severity: str
    state: str
    trigger_value: float
    last_value: float
    raised_at: datetime
    acked_at: Optional[datetime] = None
    resolved_at: Optional[datetime] = None
    acked_by: Optional[str] = None


@dataclass(frozen=True)
class AlertTransition:
    """One lifecycle edge, in the shape sinks and the SSE stream emit."""

    alert_id: int
    channel_id: int
    label: str
    state: str
    field: str
    value: float
    ts: datetime
    severity: str

    def to_json_dict(self) -> dict:
        return {
            "alert_id": self.alert_id,
            "channel_id": self.channel_id,
            "label": self.label,
            "state": self.state,
            "field": self.field,
            "value": self.value,
            "ts": format_timestamp(self.ts),
            "severity": self.severity,
        }


@dataclass(frozen=True)
class RuleState:
    breach_count: int = 0
    clear_count: int = 0
    active: bool = False  # a non-resolved alert exists for this rule


def evaluate(state: RuleState, rule: AlertRule, value: float, ts: datetime) -> tuple[RuleState, Optional[str]]:
    """Advance one rule's counters by one sample.

    Returns the new state plus "raise"/"resolve" when this sample is the
    debounce_n-th consecutive breach or the clear_n-th consecutive
    in-band sample against a live alert. ts is unused here but keeps the
    signature aligned with the engine's bookkeeping.
    """
    if rule.in_band(value):
        clear = state.clear_count + 1
        if state.active and clear >= rule.clear_n:
            return RuleState(), "resolve"
        return replace(state, breach_count=0, clear_count=clear), None
    breaches = state.breach_count + 1
    if not state.active and breaches >= rule.debounce_n:
        return RuleState(active=True), "raise"
    return replace(state, breach_count=breaches, clear_count=0), None


class ChannelAlertEngine:
    """Lifecycle bookkeeping for one channel's rules.

    Not thread-safe on its own; the ingest service serializes calls per
    channel.
    """

    def __init__(self, channel_id: int, rules: list[AlertRule]):
        for rule in rules:
            rule.validate()
        self.channel_id = channel_id
        self.rules = list(rules)
        self._rule_states: dict[int, RuleState] = {i: RuleState() for i in range(len(rules))}
        self._live: dict[int, Alert] = {}  # rule index -> current non-resolved alert
        self._alerts: dict[int, Alert] = {}  # alert_id -> alert
        self._next_alert_id = 1

    def evaluate_update(self, numeric_fields: dict[str, Optional[float]], ts: datetime) -> list[AlertTransition]:
        """Run every rule against one accepted update.

        A missing or unparsable field leaves that rule's counters alone.
        """
        transitions = []
        for idx, rule in enumerate(self.rules):
            value = numeric_fields.get(rule.field)
            if value is None:
                continue
            state, edge = evaluate(self._rule_states[idx], rule, value, ts)
            self._rule_states[idx] = state
            live = self._live.get(idx)
            if live is not None:
                live.last_value = value
            if edge == "raise":
                alert = Alert(
                    alert_id=self._next_alert_id,
                    channel_id=self.channel_id,
                    label=rule.label,
                    field=rule.field,
                    severity=rule.severity,
                    state=ACTIVE,
                    trigger_value=value,
                    last_value=value,
                    raised_at=ts,
                )
                self._next_alert_id += 1
                self._live[idx] = alert
                self._alerts[alert.alert_id] = alert
                transitions.append(self._transition(alert, ts))
            elif edge == "resolve":
                alert = self._live.pop(idx)
                alert.state = RESOLVED
                alert.resolved_at = ts
                transitions.append(self._transition(alert, ts))
        return transitions

    def acknowledge(self, alert_id: int, who: str, ts: datetime) -> tuple[Alert, AlertTransition]:
        alert = self._alerts.get(alert_id)
        if alert is None:
            raise AlertNotFound(f"no alert {alert_id} on channel {self.channel_id}")
        if alert.state != ACTIVE:
            raise AlertConflict(f"alert {alert_id} is {alert.state}, not {ACTIVE}")
        alert.state = ACKNOWLEDGED
        alert.acked_at = ts
        alert.acked_by = who
        return alert, self._transition(alert, ts)

    def open_alerts(self) -> list[Alert]:
        """Non-resolved alerts, oldest first; what a fresh stream replays."""
        return sorted(self._live.values(), key=lambda a: a.alert_id)

    def get(self, alert_id: int) -> Optional[Alert]:
        return self._alerts.get(alert_id)

    def counts_by_label(self) -> dict[str, dict]:
        out: dict[str, dict] = {}
        for alert in self._alerts.values():
            slot = out.setdefault(alert.label, {"severity": alert.severity, "count": 0})
            slot["count"] += 1
        return out

    def _transition(self, alert: Alert, ts: datetime) -> AlertTransition:
        return AlertTransition(
            alert_id=alert.alert_id,
            channel_id=alert.channel_id,
            label=alert.label,
            state=alert.state,
            field=alert.field,
            value=alert.last_value,
            ts=ts,
            severity=alert.severity,
        )


class LogSink:
    """Always-on sink: one log line per transition."""

    def deliver(self, transition: AlertTransition) -> None:
        log.info(
            "alert channel=%d id=%d label=%s state=%s field=%s value=%s severity=%s",
            transition.channel_id,
            transition.alert_id,
            transition.label,
            transition.state,
            transition.field,
            transition.value,
            transition.severity,
        )


class WebhookSink:
    """POSTs each transition as JSON; bounded retries, then drop and log."""

    def __init__(self, url: str, backoff_s: tuple[float, ...] = (1.0, 2.0, 4.0), timeout_s: float = 5.0):
        self.url = url
        self.backoff_s = backoff_s
        self.timeout_s = timeout_s

    def deliver(self, transition: AlertTransition) -> None:
        payload = json.dumps(transition.to_json_dict()).encode("utf-8")
        attempts = 1 + len(self.backoff_s)
        for attempt in range(attempts):
            try:
                request = urllib.request.Request(
                    self.url, data=payload, headers={"Content-Type": "application/json"}
                )
                with urllib.request.urlopen(request, timeout=self.timeout_s):
                    return
            except (urllib.error.URLError, OSError) as exc:
                if attempt + 1 == attempts:
                    log.error(
                        "webhook %s failed after %d attempts, dropping alert %d transition: %s",
                        self.url, attempts, transition.alert_id, exc,
                    )
                    return
                time.sleep(self.backoff_s[attempt])


class NotificationDispatcher:
    """Background fan-out of transitions to sinks, in emission order."""

    _STOP = ("stop", None)

    def __init__(self, sinks: list):
        self._sinks = sinks
        self._queue: queue.Queue = queue.Queue()
        self._thread = threading.Thread(target=self._run, name="alert-notify", daemon=True)
        self._thread.start()

    def dispatch(self, transition: AlertTransition) -> None:
        self._queue.put(("deliver", transition))

    def _run(self) -> None:
        while True:
            kind, payload = self._queue.get()
            if kind == "stop":
                return
            if kind == "flush":
                payload.set()
                continue
            for sink in self._sinks:
                try:
                    sink.deliver(payload)
                except Exception:
                    log.exception("alert sink %r failed", sink)

    def drain(self, timeout_s: float = 30.0) -> None:
        """Block until everything queued before this call has been delivered."""
        flushed = threading.Event()
        self._queue.put(("flush", flushed))
        flushed.wait(timeout_s)

    def close(self) -> None:
        self._queue.put(self._STOP)
        self._thread.join(timeout=5.0)
