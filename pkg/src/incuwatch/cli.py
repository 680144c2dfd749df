"""Single entry point: serve, device, all-in-one, replay and report.

Exit codes: 0 success, 1 configuration problem (including bad usage),
2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import threading
import time
from pathlib import Path

from .agent import (
    AgentConfig,
    HttpTransport,
    LocalTransport,
    TransportError,
    parse_agent_config,
    run_agent,
)
from .hub import ConfigError
from .report import build_report
from .server import load_server_config, parse_server_config, serve
from .store import StoreCorruptionError
from .wire import FIELD_KEYS, FeedEntry, WireError, format_timestamp

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; this CLI promises exit 1 with usage
    # text on stderr instead.
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="incuwatch", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p_serve = sub.add_parser("serve", help="run the telemetry service")
    p_serve.add_argument("--config", required=True, help="server config JSON")

    p_device = sub.add_parser("device", help="run one incubator device agent")
    p_device.add_argument("--config", required=True, help="agent config JSON")
    p_device.add_argument("--server", help="override server_url from the config")

    p_all = sub.add_parser("all-in-one", help="embedded server plus a device fleet")
    p_all.add_argument("--config", required=True, help="combined config JSON")

    p_replay = sub.add_parser("replay", help="re-post a recorded NDJSON log")
    p_replay.add_argument("--log", required=True, help="NDJSON file to replay")
    p_replay.add_argument("--server", required=True, help="target server URL")
    p_replay.add_argument("--api-key", required=True, help="channel write key")

    p_report = sub.add_parser("report", help="summarize a stored channel log")
    p_report.add_argument("--data-dir", required=True)
    p_report.add_argument("--channel", required=True, type=int)
    p_report.add_argument("--window", required=True, type=float, help="seconds of trailing data")

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    handler = {
        "serve": _cmd_serve,
        "device": _cmd_device,
        "all-in-one": _cmd_all_in_one,
        "replay": _cmd_replay,
        "report": _cmd_report,
    }[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StoreCorruptionError as exc:
        print(f"store error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        return EXIT_OK


def _cmd_serve(args) -> int:
    config = load_server_config(args.config)
    port_override = os.environ.get("PORT")
    if port_override:
        try:
            config.port = int(port_override)
        except ValueError as exc:
            raise ConfigError(f"PORT must be an integer, got {port_override!r}") from exc
    server = serve(config)
    print(f"listening on {server.url}", flush=True)
    try:
        while True:
            time.sleep(1.0)
    finally:
        server.stop()
    return EXIT_OK


def _load_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc


def _cmd_device(args) -> int:
    cfg = parse_agent_config(_load_json(args.config), base_dir=Path(args.config).parent)
    if args.server:
        cfg.server_url = args.server
    summary = run_agent(cfg)
    print(json.dumps(summary.to_json_dict(), indent=2))
    return EXIT_OK if summary.rejected == 0 and summary.unsent == 0 else EXIT_RUNTIME


def _cmd_all_in_one(args) -> int:
    doc = _load_json(args.config)
    if not isinstance(doc, dict) or "server" not in doc or "agents" not in doc:
        raise ConfigError("all-in-one config needs 'server' and 'agents' sections")
    server_config = parse_server_config(doc["server"])
    base_dir = Path(args.config).parent
    agent_configs = [parse_agent_config(a, base_dir=base_dir) for a in doc["agents"]]

    server = serve(server_config)
    print(f"listening on {server.url}", flush=True)
    transport = LocalTransport(server.hub)
    summaries: list = [None] * len(agent_configs)
    failures: list[BaseException] = []

    def run_one(index: int, cfg: AgentConfig) -> None:
        try:
            summaries[index] = run_agent(cfg, transport=transport)
        except BaseException as exc:  # surfaced as exit 2 below
            failures.append(exc)

    threads = [
        threading.Thread(target=run_one, args=(i, cfg), name=f"agent-{cfg.channel_id}")
        for i, cfg in enumerate(agent_configs)
    ]
    try:
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()
        server.hub.drain_notifications()
    finally:
        server.stop()

    if failures:
        print(f"agent failure: {failures[0]}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps([s.to_json_dict() for s in summaries], indent=2))
    return EXIT_OK


def _cmd_replay(args) -> int:
    path = Path(args.log)
    if not path.exists():
        raise ConfigError(f"no such log file: {path}")
    transport = HttpTransport(args.server)
    accepted = rejected = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                entry = FeedEntry.from_json_dict(json.loads(line))
            except (json.JSONDecodeError, WireError) as exc:
                raise ConfigError(f"{path}:{lineno}: bad record: {exc}") from exc
            parts = [f"api_key={args.api_key}"]
            parts += [f"{k}={entry.fields[k]}" for k in FIELD_KEYS if k in entry.fields]
            parts.append(f"created_at={format_timestamp(entry.created_at)}")
            try:
                status, text = transport.post_update("&".join(parts))
            except TransportError as exc:
                print(f"replay aborted at line {lineno}: {exc}", file=sys.stderr)
                return EXIT_RUNTIME
            if status == 200:
                accepted += 1
            else:
                rejected += 1
                log.warning("line %d rejected: %d %s", lineno, status, text)
    print(json.dumps({"accepted": accepted, "rejected": rejected}))
    return EXIT_OK if rejected == 0 else EXIT_RUNTIME


def _cmd_report(args) -> int:
    doc = build_report(args.data_dir, args.channel, args.window)
    print(json.dumps(doc, indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
