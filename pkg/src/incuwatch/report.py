"""Channel summaries computed straight from a stored NDJSON log.

A report is a pure function of the log file (plus the rule set used for
alert counting): same file, same bytes out. Statistics cover only fields
present and parsable in the window; alert counts come from replaying the
rules over the windowed entries with fresh counters.
"""

from __future__ import annotations

import statistics
from datetime import timedelta
from pathlib import Path

from .alerts import DEFAULT_RULES, AlertRule, ChannelAlertEngine
from .store import ChannelLog, channel_log_path
from .wire import FIELD_KEYS, format_timestamp

ROUND_DIGITS = 6


def build_report(
    data_dir: str | Path,
    channel_id: int,
    window_s: float,
    rules: tuple[AlertRule, ...] = DEFAULT_RULES,
) -> dict:
    log = ChannelLog.open(channel_log_path(data_dir, channel_id), channel_id)
    try:
        entries = log.query(log.count() or 0)
    finally:
        log.close()

    doc: dict = {"channel_id": channel_id, "window_s": window_s, "entries": 0}
    if not entries:
        doc.update({"window_start": None, "window_end": None, "fields": {},
                    "mean_heater_duty": None, "alerts": {}})
        return doc

    window_end = entries[-1].created_at
    window_start = window_end - timedelta(seconds=window_s)
    windowed = [e for e in entries if e.created_at >= window_start]

    values: dict[str, list[float]] = {key: [] for key in FIELD_KEYS}
    for entry in windowed:
        for key, raw in entry.fields.items():
            try:
                values[key].append(float(raw))
            except ValueError:
                continue

    fields = {}
    for key in FIELD_KEYS:
        series = values[key]
        if not series:
            continue
        fields[key] = {
            "count": len(series),
            "mean": round(statistics.fmean(series), ROUND_DIGITS),
            "min": round(min(series), ROUND_DIGITS),
            "max": round(max(series), ROUND_DIGITS),
            "stddev": round(statistics.pstdev(series), ROUND_DIGITS),
        }

    engine = ChannelAlertEngine(channel_id, list(rules))
    for entry in windowed:
        numeric = {}
        for key, raw in entry.fields.items():
            try:
                numeric[key] = float(raw)
            except ValueError:
                continue
        engine.evaluate_update(numeric, entry.created_at)

    doc.update(
        {
            "entries": len(windowed),
            "window_start": format_timestamp(window_start),
            "window_end": format_timestamp(window_end),
            "fields": fields,
            "mean_heater_duty": fields.get("field7", {}).get("mean"),
            "alerts": engine.counts_by_label(),
        }
    )
    return doc
