"""HTTP front of the telemetry hub.

Endpoints:

    POST /update                                  telemetry ingest (write key in body)
    GET  /channels/{id}/feeds.json                feed query (read key)
    POST /channels/{id}/commands                  enqueue a remote command (write key)
    GET  /channels/{id}/commands/next             consume-on-delivery poll (write key)
    POST /channels/{id}/alerts/{alert_id}/ack     acknowledge (read key, body who=<name>)
    GET  /channels/{id}/alerts/stream             server-sent events, event name "alert" (read key)
    GET  /channels/{id}/config.json               channel metadata incl. alert rule bounds (read key)
    GET  /healthz                                 liveness probe
    GET  /                                        dashboard static files, when configured

api_key travels in the form body for /update (that is the update wire
format) and as an ?api_key= query parameter elsewhere; command and ack
POSTs may alternatively carry it as an api_key pair in the form body.

Channels are declared in a JSON config file at startup; there is no
runtime admin API.
"""

from __future__ import annotations

import json
import logging
import mimetypes
import queue
import re
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional
from urllib.parse import parse_qsl, urlsplit

from .alerts import AlertRule, DEFAULT_RULES
from .hub import ChannelConfig, ConfigError, Hub, Response
from .wire import WireError, parse_timestamp

log = logging.getLogger(__name__)

SSE_HEARTBEAT_S = 1.0


@dataclass
class ServerConfig:
    port: int = 8000
    host: str = "127.0.0.1"
    data_dir: str = "data"
    static_dir: Optional[str] = None
    channels: list[ChannelConfig] = field(default_factory=list)


def _parse_rule(doc: dict, channel_id: int) -> AlertRule:
    unknown = set(doc) - {"field", "lower", "upper", "debounce_n", "clear_n", "severity", "label"}
    if unknown:
        raise ConfigError(f"channel {channel_id}: unknown alert rule keys {sorted(unknown)}")
    try:
        rule = AlertRule(
            field=doc["field"],
            lower=doc.get("lower"),
            upper=doc.get("upper"),
            debounce_n=int(doc.get("debounce_n", 3)),
            clear_n=int(doc.get("clear_n", 5)),
            severity=doc.get("severity", "warning"),
            label=doc.get("label", doc["field"]),
        )
        rule.validate()
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"channel {channel_id}: bad alert rule {doc!r}: {exc}") from exc
    return rule


def parse_channel_config(doc: dict) -> ChannelConfig:
    if not isinstance(doc, dict):
        raise ConfigError(f"channel entries must be objects, got {doc!r}")
    unknown = set(doc) - {
        "channel_id", "name", "write_key", "read_key", "min_update_interval_s",
        "alert_rules", "field_names", "webhook_url", "created_at",
    }
    if unknown:
        raise ConfigError(f"unknown channel config keys {sorted(unknown)}")
    try:
        channel_id = int(doc["channel_id"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"channel config needs an integer channel_id: {exc}") from exc
    if "alert_rules" in doc:
        rules = tuple(_parse_rule(r, channel_id) for r in doc["alert_rules"])
    else:
        rules = DEFAULT_RULES
    field_names = doc.get("field_names")
    if field_names is None:
        field_names = (None,) * 8
    elif isinstance(field_names, list) and len(field_names) <= 8:
        field_names = tuple(field_names) + (None,) * (8 - len(field_names))
    else:
        raise ConfigError(f"channel {channel_id}: field_names must be a list of at most 8 labels")
    try:
        cfg = ChannelConfig(
            channel_id=channel_id,
            name=str(doc.get("name", f"channel-{channel_id}")),
            write_key=str(doc.get("write_key", "")),
            read_key=str(doc.get("read_key", "")),
            min_update_interval_s=float(doc.get("min_update_interval_s", 1.0)),
            alert_rules=rules,
            field_names=field_names,
            webhook_url=doc.get("webhook_url"),
            created_at=doc.get("created_at", ChannelConfig.created_at),
        )
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def parse_server_config(doc: dict) -> ServerConfig:
    if not isinstance(doc, dict):
        raise ConfigError("server config must be a JSON object")
    unknown = set(doc) - {"port", "host", "data_dir", "static_dir", "channels"}
    if unknown:
        raise ConfigError(f"unknown server config keys {sorted(unknown)}")
    channels = [parse_channel_config(c) for c in doc.get("channels", [])]
    if not channels:
        raise ConfigError("server config declares no channels")
    try:
        return ServerConfig(
            port=int(doc.get("port", 8000)),
            host=str(doc.get("host", "127.0.0.1")),
            data_dir=str(doc.get("data_dir", "data")),
            static_dir=doc.get("static_dir"),
            channels=channels,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad server config: {exc}") from exc


def load_server_config(path: str | Path) -> ServerConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_server_config(doc)


_ROUTES = [
    ("POST", re.compile(r"^/update$"), "update"),
    ("GET", re.compile(r"^/channels/(\d+)/feeds\.json$"), "feeds"),
    ("POST", re.compile(r"^/channels/(\d+)/commands$"), "post_command"),
    ("GET", re.compile(r"^/channels/(\d+)/commands/next$"), "poll_command"),
    ("POST", re.compile(r"^/channels/(\d+)/alerts/(\d+)/ack$"), "ack"),
    ("GET", re.compile(r"^/channels/(\d+)/alerts/stream$"), "stream"),
    ("GET", re.compile(r"^/channels/(\d+)/config\.json$"), "channel_config"),
    ("GET", re.compile(r"^/healthz$"), "healthz"),
]


class _Handler(BaseHTTPRequestHandler):
    server: "TelemetryServer"

    def do_GET(self):
        self._route("GET")

    def do_POST(self):
        self._route("POST")

    def log_message(self, fmt, *args):
        log.debug("http %s - %s", self.address_string(), fmt % args)

    # -- plumbing ----------------------------------------------------------

    def _route(self, method: str) -> None:
        split = urlsplit(self.path)
        self._query = dict(parse_qsl(split.query, keep_blank_values=True))
        for verb, pattern, name in _ROUTES:
            match = pattern.match(split.path)
            if match:
                if verb != method:
                    self._respond(Response(405, "method not allowed"))
                    return
                getattr(self, f"_handle_{name}")(*(int(g) for g in match.groups()))
                return
        if method == "GET":
            self._handle_static(split.path)
            return
        self._respond(Response(404, "not found"))

    def _respond(self, response: Response) -> None:
        body = response.body.encode("utf-8")
        self.send_response(response.status)
        self.send_header("Content-Type", f"{response.content_type}; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        if body:
            self.wfile.write(body)

    def _read_body(self) -> Optional[str]:
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            return None

    def _api_key(self, body_pairs: Optional[dict] = None) -> str:
        key = self._query.get("api_key", "")
        if not key and body_pairs:
            key = body_pairs.get("api_key", "")
        return key

    # -- endpoints ---------------------------------------------------------

    def _handle_update(self) -> None:
        body = self._read_body()
        if body is None:
            self._respond(Response(400, "body must be utf-8"))
            return
        self._respond(self.server.hub.handle_update(body))

    def _handle_feeds(self, channel_id: int) -> None:
        results = None
        if "results" in self._query:
            try:
                results = int(self._query["results"])
            except ValueError:
                self._respond(Response(400, "results must be an integer"))
                return
        try:
            start = parse_timestamp(self._query["start"]) if "start" in self._query else None
            end = parse_timestamp(self._query["end"]) if "end" in self._query else None
        except WireError as exc:
            self._respond(Response(400, str(exc)))
            return
        self._respond(
            self.server.hub.handle_feeds(channel_id, self._api_key(), results, start, end)
        )

    def _handle_post_command(self, channel_id: int) -> None:
        body = self._read_body()
        if body is None:
            self._respond(Response(400, "body must be utf-8"))
            return
        pairs = dict(parse_qsl(body, keep_blank_values=True))
        api_key = self._api_key(pairs)
        if "api_key" in pairs:
            # the key is transport auth, not part of the command text
            body = "&".join(part for part in body.split("&") if not part.startswith("api_key="))
        self._respond(self.server.hub.post_command(channel_id, api_key, body))

    def _handle_poll_command(self, channel_id: int) -> None:
        self._respond(self.server.hub.poll_command(channel_id, self._api_key()))

    def _handle_ack(self, channel_id: int, alert_id: int) -> None:
        body = self._read_body() or ""
        pairs = dict(parse_qsl(body, keep_blank_values=True))
        self._respond(
            self.server.hub.ack_alert(channel_id, alert_id, self._api_key(pairs), pairs.get("who", ""))
        )

    def _handle_channel_config(self, channel_id: int) -> None:
        self._respond(self.server.hub.channel_meta(channel_id, self._api_key()))

    def _handle_healthz(self) -> None:
        self._respond(Response(200, "ok"))

    def _handle_stream(self, channel_id: int) -> None:
        response, subscriber, replay = self.server.hub.subscribe_alerts(channel_id, self._api_key())
        if subscriber is None:
            self._respond(response)
            return
        try:
            self.send_response(200)
            self.send_header("Content-Type", "text/event-stream")
            self.send_header("Cache-Control", "no-cache")
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            for payload in replay:
                self._write_event(payload)
            while not self.server.closing:
                try:
                    payload = subscriber.get(timeout=SSE_HEARTBEAT_S)
                except queue.Empty:
                    self.wfile.write(b": keepalive\n\n")
                    self.wfile.flush()
                    continue
                if payload is None:
                    break
                self._write_event(payload)
        except (BrokenPipeError, ConnectionResetError):
            pass
        finally:
            self.server.hub.unsubscribe_alerts(channel_id, subscriber)

    def _write_event(self, payload: dict) -> None:
        data = json.dumps(payload, separators=(",", ":"))
        self.wfile.write(f"event: alert\ndata: {data}\n\n".encode("utf-8"))
        self.wfile.flush()

    def _handle_static(self, path: str) -> None:
        root = self.server.static_dir
        if root is None:
            self._respond(Response(404, "not found"))
            return
        name = path.lstrip("/") or "index.html"
        target = (root / name).resolve()
        if not target.is_relative_to(root.resolve()) or not target.is_file():
            self._respond(Response(404, "not found"))
            return
        content_type = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
        raw = target.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)


class TelemetryServer(ThreadingHTTPServer):
    """Hub plus HTTP plumbing; start() serves on a background thread."""

    daemon_threads = True
    # don't block close on lingering SSE handler threads
    block_on_close = False

    def __init__(self, hub: Hub, host: str = "127.0.0.1", port: int = 0,
                 static_dir: Optional[str | Path] = None):
        super().__init__((host, port), _Handler)
        self.hub = hub
        self.static_dir = Path(static_dir) if static_dir else None
        self.closing = False
        self._thread: Optional[threading.Thread] = None

    @property
    def port(self) -> int:
        return self.server_address[1]

    @property
    def url(self) -> str:
        host = self.server_address[0]
        return f"http://{host}:{self.port}"

    def start(self) -> None:
        self._thread = threading.Thread(target=self.serve_forever, name="telemetry-http", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self.closing = True
        self.hub.close()  # wakes SSE loops via their None sentinel
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5.0)


def build_hub(config: ServerConfig, webhook_backoff_s: tuple[float, ...] = (1.0, 2.0, 4.0)) -> Hub:
    return Hub(config.channels, config.data_dir, webhook_backoff_s=webhook_backoff_s)


def serve(config: ServerConfig) -> TelemetryServer:
    """Build the hub and start serving; caller owns stop()."""
    hub = build_hub(config)
    server = TelemetryServer(hub, host=config.host, port=config.port, static_dir=config.static_dir)
    server.start()
    log.info("serving %d channel(s) on %s", len(config.channels), server.url)
    return server
