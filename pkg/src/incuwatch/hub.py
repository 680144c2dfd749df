"""Core of the telemetry service, independent of any HTTP framing.

One Hub owns all channels declared in the server config. Per channel it
holds the append-only log, the alert engine, the command queue, the rate
limiter and the set of live stream subscribers, all mutated under a
single per-channel lock so writers are serialized and readers see a
consistent prefix. Different channels never contend.

Alert evaluation runs synchronously on the ingest path (the 200 for an
update is returned only after its transitions exist); delivery to sinks
happens on a background dispatcher so notification targets cannot stall
ingestion.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
from collections import deque
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional

from .alerts import (
    DEFAULT_RULES,
    AlertConflict,
    AlertNotFound,
    AlertRule,
    AlertTransition,
    ChannelAlertEngine,
    LogSink,
    NotificationDispatcher,
    WebhookSink,
)
from .store import ChannelLog, channel_log_path
from .wire import (
    AuthShapeError,
    Command,
    CommandValidationError,
    FeedEntry,
    WireError,
    encode_feeds,
    format_timestamp,
    parse_command_body,
    parse_update,
)

log = logging.getLogger(__name__)

DEFAULT_FEED_RESULTS = 100
MAX_FEED_RESULTS = 8000

# Fixed fallback so deterministic runs do not depend on wall time.
DEFAULT_CHANNEL_CREATED_AT = "2026-01-01T00:00:00Z"


class ConfigError(ValueError):
    """Bad server or agent configuration; the CLI maps this to exit 1."""


@dataclass(frozen=True)
class ChannelConfig:
    channel_id: int
    name: str
    write_key: str
    read_key: str
    min_update_interval_s: float = 1.0
    alert_rules: tuple[AlertRule, ...] = DEFAULT_RULES
    field_names: tuple[Optional[str], ...] = (None,) * 8
    webhook_url: Optional[str] = None
    created_at: str = DEFAULT_CHANNEL_CREATED_AT

    def validate(self) -> None:
        if self.channel_id <= 0:
            raise ValueError(f"channel_id must be positive, got {self.channel_id}")
        if not self.write_key or not self.read_key:
            raise ValueError(f"channel {self.channel_id}: write_key and read_key required")
        if self.write_key == self.read_key:
            raise ValueError(f"channel {self.channel_id}: write_key must differ from read_key")
        if self.min_update_interval_s < 0:
            raise ValueError(f"channel {self.channel_id}: min_update_interval_s must be >= 0")
        if len(self.field_names) != 8:
            raise ValueError(f"channel {self.channel_id}: field_names must have 8 slots")
        for rule in self.alert_rules:
            rule.validate()


@dataclass
class Response:
    """Transport-neutral outcome: HTTP status plus a text or JSON body."""

    status: int
    body: str = ""
    content_type: str = "text/plain"


class _ChannelRuntime:
    def __init__(self, cfg: ChannelConfig, data_dir: Path, webhook_backoff_s: tuple[float, ...]):
        self.cfg = cfg
        self.lock = threading.RLock()
        self.log = ChannelLog.open(channel_log_path(data_dir, cfg.channel_id), cfg.channel_id)
        self.engine = ChannelAlertEngine(cfg.channel_id, list(cfg.alert_rules))
        self.commands: deque[Command] = deque()
        self.next_command_id = 1
        self.last_admitted: Optional[datetime] = None
        self.subscribers: list[queue.SimpleQueue] = []
        sinks: list = [LogSink()]
        if cfg.webhook_url:
            sinks.append(WebhookSink(cfg.webhook_url, backoff_s=webhook_backoff_s))
        self.dispatcher = NotificationDispatcher(sinks)

    # Rate limiting works on whole seconds: that is the wire resolution
    # of created_at, and the server clock is truncated to match.
    def admit(self, ts: datetime) -> bool:
        if self.last_admitted is None:
            return True
        return (ts - self.last_admitted).total_seconds() >= self.cfg.min_update_interval_s


def _utc_now_seconds() -> datetime:
    return datetime.now(timezone.utc).replace(microsecond=0)


class Hub:
    """All channel state plus the operations the HTTP layer exposes."""

    def __init__(
        self,
        channels: list[ChannelConfig],
        data_dir: str | Path,
        now_fn: Callable[[], datetime] = _utc_now_seconds,
        webhook_backoff_s: tuple[float, ...] = (1.0, 2.0, 4.0),
    ):
        seen: set[int] = set()
        for cfg in channels:
            cfg.validate()
            if cfg.channel_id in seen:
                raise ValueError(f"duplicate channel_id {cfg.channel_id}")
            seen.add(cfg.channel_id)
        self._now = now_fn
        self._by_id: dict[int, _ChannelRuntime] = {}
        self._by_write_key: dict[str, _ChannelRuntime] = {}
        data_dir = Path(data_dir)
        for cfg in channels:
            runtime = _ChannelRuntime(cfg, data_dir, webhook_backoff_s)
            self._by_id[cfg.channel_id] = runtime
            if cfg.write_key in self._by_write_key:
                raise ValueError(f"write_key of channel {cfg.channel_id} reused")
            self._by_write_key[cfg.write_key] = runtime

    # -- telemetry ---------------------------------------------------------

    def handle_update(self, body: str) -> Response:
        try:
            parsed = parse_update(body)
        except AuthShapeError:
            return Response(401, "missing api_key")
        except WireError as exc:
            return Response(400, str(exc))
        runtime = self._by_write_key.get(parsed.api_key)
        if runtime is None:
            return Response(401, "bad write key")

        admitted_at = parsed.created_at if parsed.created_at is not None else self._now()
        with runtime.lock:
            if not runtime.admit(admitted_at):
                return Response(429, "0")
            entry = FeedEntry(
                entry_id=runtime.log.next_entry_id,
                created_at=admitted_at,
                fields=dict(parsed.fields),
            )
            try:
                entry_id = runtime.log.append(entry)
            except (OSError, ValueError) as exc:
                # ValueError covers a log closed by shutdown racing a writer
                log.error("channel %d: append failed: %s", runtime.cfg.channel_id, exc)
                return Response(500, "storage failure")
            runtime.last_admitted = admitted_at
            numeric = {key: parsed.numeric(key) for key in parsed.fields}
            for transition in runtime.engine.evaluate_update(numeric, admitted_at):
                self._emit(runtime, transition)
        return Response(200, str(entry_id))

    def handle_feeds(
        self,
        channel_id: int,
        api_key: str,
        results: Optional[int] = None,
        start: Optional[datetime] = None,
        end: Optional[datetime] = None,
    ) -> Response:
        runtime = self._by_id.get(channel_id)
        if runtime is None:
            return Response(404, "unknown channel")
        if api_key != runtime.cfg.read_key:
            return Response(401, "bad read key")
        if results is None:
            results = DEFAULT_FEED_RESULTS
        if results < 0:
            return Response(400, "results must be >= 0")
        results = min(results, MAX_FEED_RESULTS)
        with runtime.lock:
            entries = runtime.log.query(results, start=start, end=end)
        meta = {
            "id": runtime.cfg.channel_id,
            "name": runtime.cfg.name,
            "created_at": runtime.cfg.created_at,
        }
        return Response(200, encode_feeds(meta, entries), content_type="application/json")

    # -- commands ----------------------------------------------------------

    def post_command(self, channel_id: int, api_key: str, body: str) -> Response:
        runtime = self._by_id.get(channel_id)
        if runtime is None:
            return Response(404, "unknown channel")
        if api_key != runtime.cfg.write_key:
            return Response(401, "bad write key")
        try:
            parse_command_body(body)
        except CommandValidationError as exc:
            return Response(400, str(exc))
        with runtime.lock:
            command = Command(
                command_id=runtime.next_command_id,
                body=body,
                created_at=self._now(),
            )
            runtime.next_command_id += 1
            runtime.commands.append(command)
        return Response(200, str(command.command_id))

    def poll_command(self, channel_id: int, api_key: str) -> Response:
        runtime = self._by_id.get(channel_id)
        if runtime is None:
            return Response(404, "unknown channel")
        if api_key != runtime.cfg.write_key:
            return Response(401, "bad write key")
        with runtime.lock:
            if not runtime.commands:
                return Response(204)
            command = runtime.commands.popleft()
            command.consumed = True
        return Response(200, json.dumps(command.to_json_dict()), content_type="application/json")

    # -- alerts ------------------------------------------------------------

    def ack_alert(self, channel_id: int, alert_id: int, api_key: str, who: str) -> Response:
        runtime = self._by_id.get(channel_id)
        if runtime is None:
            return Response(404, "unknown channel")
        if api_key != runtime.cfg.read_key:
            return Response(401, "bad read key")
        if not who:
            return Response(400, "who is required")
        with runtime.lock:
            try:
                alert, transition = runtime.engine.acknowledge(alert_id, who, self._now())
            except AlertNotFound as exc:
                return Response(404, str(exc))
            except AlertConflict as exc:
                return Response(409, str(exc))
            self._emit(runtime, transition)
        return Response(200, json.dumps(alert_json(alert)), content_type="application/json")

    def subscribe_alerts(self, channel_id: int, api_key: str) -> tuple[Response, Optional[queue.SimpleQueue], list[dict]]:
        """Attach a stream subscriber.

        Returns (response, queue, replay). On success the queue will
        receive every subsequent transition as a JSON dict; replay holds
        the currently open (ACTIVE/ACKNOWLEDGED) alerts in raise order.
        """
        runtime = self._by_id.get(channel_id)
        if runtime is None:
            return Response(404, "unknown channel"), None, []
        if api_key != runtime.cfg.read_key:
            return Response(401, "bad read key"), None, []
        subscriber: queue.SimpleQueue = queue.SimpleQueue()
        with runtime.lock:
            replay = []
            for alert in runtime.engine.open_alerts():
                replay.append(
                    AlertTransition(
                        alert_id=alert.alert_id,
                        channel_id=alert.channel_id,
                        label=alert.label,
                        state=alert.state,
                        field=alert.field,
                        value=alert.last_value,
                        ts=alert.acked_at or alert.raised_at,
                        severity=alert.severity,
                    ).to_json_dict()
                )
            runtime.subscribers.append(subscriber)
        return Response(200), subscriber, replay

    def unsubscribe_alerts(self, channel_id: int, subscriber: queue.SimpleQueue) -> None:
        runtime = self._by_id.get(channel_id)
        if runtime is None:
            return
        with runtime.lock:
            if subscriber in runtime.subscribers:
                runtime.subscribers.remove(subscriber)

    def _emit(self, runtime: _ChannelRuntime, transition: AlertTransition) -> None:
        runtime.dispatcher.dispatch(transition)
        payload = transition.to_json_dict()
        for subscriber in runtime.subscribers:
            subscriber.put(payload)

    # -- metadata ----------------------------------------------------------

    def channel_meta(self, channel_id: int, api_key: str) -> Response:
        runtime = self._by_id.get(channel_id)
        if runtime is None:
            return Response(404, "unknown channel")
        if api_key != runtime.cfg.read_key:
            return Response(401, "bad read key")
        cfg = runtime.cfg
        doc = {
            "channel_id": cfg.channel_id,
            "name": cfg.name,
            "created_at": cfg.created_at,
            "min_update_interval_s": cfg.min_update_interval_s,
            "field_names": list(cfg.field_names),
            "alert_rules": [
                {
                    "field": rule.field,
                    "lower": rule.lower,
                    "upper": rule.upper,
                    "debounce_n": rule.debounce_n,
                    "clear_n": rule.clear_n,
                    "severity": rule.severity,
                    "label": rule.label,
                }
                for rule in cfg.alert_rules
            ],
        }
        return Response(200, json.dumps(doc), content_type="application/json")

    def channel_ids(self) -> list[int]:
        return sorted(self._by_id)

    def drain_notifications(self) -> None:
        for runtime in self._by_id.values():
            runtime.dispatcher.drain()

    def close(self) -> None:
        for runtime in self._by_id.values():
            with runtime.lock:
                for subscriber in runtime.subscribers:
                    subscriber.put(None)
                runtime.subscribers.clear()
            runtime.dispatcher.close()
            runtime.log.close()


def alert_json(alert) -> dict:
    return {
        "alert_id": alert.alert_id,
        "channel_id": alert.channel_id,
        "label": alert.label,
        "field": alert.field,
        "severity": alert.severity,
        "state": alert.state,
        "trigger_value": alert.trigger_value,
        "last_value": alert.last_value,
        "raised_at": format_timestamp(alert.raised_at),
        "acked_at": format_timestamp(alert.acked_at) if alert.acked_at else None,
        "resolved_at": format_timestamp(alert.resolved_at) if alert.resolved_at else None,
        "acked_by": alert.acked_by,
    }
