import json
from datetime import timedelta

from incuwatch.hub import ChannelConfig, Hub
from incuwatch.report import build_report
from incuwatch.server import TelemetryServer
from incuwatch.cli import main
from incuwatch.wire import format_timestamp, parse_timestamp

T0 = parse_timestamp("2026-01-01T00:00:00Z")


def seed_channel(tmp_path, values, field="field1", channel_id=1, extra=""):
    hub = Hub(
        [ChannelConfig(channel_id=channel_id, name="x", write_key="W1", read_key="R1")],
        tmp_path,
    )
    for i, value in enumerate(values):
        ts = format_timestamp(T0 + timedelta(seconds=i))
        response = hub.handle_update(f"api_key=W1&{field}={value}{extra}&created_at={ts}")
        assert response.status == 200
    hub.close()


def test_report_field_statistics(tmp_path):
    seed_channel(tmp_path, ["34.0", "35.0", "36.0"], extra="&field7=1.0")
    doc = build_report(tmp_path, 1, window_s=600)
    assert doc["entries"] == 3
    f1 = doc["fields"]["field1"]
    assert f1 == {"count": 3, "mean": 35.0, "min": 34.0, "max": 36.0, "stddev": 0.816497}
    assert doc["mean_heater_duty"] == 1.0
    assert doc["alerts"] == {}
    assert "field2" not in doc["fields"]


def test_report_window_restricts_entries(tmp_path):
    seed_channel(tmp_path, [f"{30 + i}.0" for i in range(10)])
    doc = build_report(tmp_path, 1, window_s=4)
    # window is the trailing 4 s ending at the last entry (inclusive)
    assert doc["entries"] == 5
    assert doc["fields"]["field1"]["min"] == 35.0


def test_report_counts_alerts_in_window(tmp_path):
    values = ["100"] * 3 + ["900"] * 3 + ["100"] * 6
    seed_channel(tmp_path, values, field="field4")
    doc = build_report(tmp_path, 1, window_s=600)
    assert doc["alerts"] == {"gas": {"severity": "critical", "count": 1}}


def test_report_empty_channel(tmp_path):
    hub = Hub([ChannelConfig(channel_id=1, name="x", write_key="W1", read_key="R1")], tmp_path)
    hub.close()
    doc = build_report(tmp_path, 1, window_s=600)
    assert doc["entries"] == 0
    assert doc["alerts"] == {}
    assert doc["mean_heater_duty"] is None


def test_report_is_pure_function_of_log(tmp_path, capsys):
    seed_channel(tmp_path, ["34.0", "35.0", "36.0"])
    assert main(["report", "--data-dir", str(tmp_path), "--channel", "1", "--window", "60"]) == 0
    first = capsys.readouterr().out
    assert main(["report", "--data-dir", str(tmp_path), "--channel", "1", "--window", "60"]) == 0
    second = capsys.readouterr().out
    assert first == second
    doc = json.loads(first)
    assert doc["channel_id"] == 1
    assert doc["alerts"] == {}


def test_cli_usage_errors(capsys):
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    err = capsys.readouterr().err
    assert "usage" in err.lower()
    assert main(["report", "--data-dir", "x"]) == 1  # missing required flags


def test_cli_bad_config_path():
    assert main(["serve", "--config", "/nonexistent/server.json"]) == 1
    assert main(["device", "--config", "/nonexistent/agent.json"]) == 1
    assert main(["all-in-one", "--config", "/nonexistent/combo.json"]) == 1


def test_cli_replay_missing_log():
    assert main(["replay", "--log", "/nope.ndjson", "--server", "http://127.0.0.1:1", "--api-key", "K"]) == 1


def all_in_one_config(tmp_path, duration=5, seed=11):
    return {
        "server": {
            "port": 0,
            "data_dir": str(tmp_path / "data"),
            "channels": [
                {"channel_id": 1, "name": "incubator-1", "write_key": "W1", "read_key": "R1",
                 "min_update_interval_s": 1}
            ],
        },
        "agents": [
            {"channel_id": 1, "write_key": "W1", "seed": seed, "dt_s": 1, "duration_s": duration,
             "local_log": str(tmp_path / "local_1.ndjson")}
        ],
    }


def test_all_in_one_runs_and_persists(tmp_path, capsys):
    config_path = tmp_path / "combo.json"
    config_path.write_text(json.dumps(all_in_one_config(tmp_path)))
    assert main(["all-in-one", "--config", str(config_path)]) == 0
    raw = capsys.readouterr().out
    assert raw.startswith("listening on http://")
    out = json.loads(raw.split("\n", 1)[1])
    assert out[0]["accepted"] == 5
    stored = (tmp_path / "data" / "channel_1.ndjson").read_bytes()
    assert len(stored.splitlines()) == 5
    assert stored == (tmp_path / "local_1.ndjson").read_bytes()


def test_replay_reproduces_channel_file_byte_identical(tmp_path, capsys):
    # record a run
    config_path = tmp_path / "combo.json"
    config_path.write_text(json.dumps(all_in_one_config(tmp_path, duration=8)))
    assert main(["all-in-one", "--config", str(config_path)]) == 0
    capsys.readouterr()
    recorded = tmp_path / "local_1.ndjson"
    original = (tmp_path / "data" / "channel_1.ndjson").read_bytes()

    # replay into a fresh server
    hub = Hub(
        [ChannelConfig(channel_id=1, name="x", write_key="W1", read_key="R1")],
        tmp_path / "fresh",
    )
    server = TelemetryServer(hub, port=0)
    server.start()
    try:
        code = main(["replay", "--log", str(recorded), "--server", server.url, "--api-key", "W1"])
        assert code == 0
        out = json.loads(capsys.readouterr().out)
        assert out == {"accepted": 8, "rejected": 0}
    finally:
        server.stop()
    assert (tmp_path / "fresh" / "channel_1.ndjson").read_bytes() == original


def test_device_cli_against_live_server(tmp_path, capsys):
    hub = Hub(
        [ChannelConfig(channel_id=1, name="x", write_key="W1", read_key="R1")],
        tmp_path / "data",
    )
    server = TelemetryServer(hub, port=0)
    server.start()
    agent_config = {
        "channel_id": 1,
        "write_key": "W1",
        "server_url": server.url,
        "seed": 3,
        "duration_s": 5,
    }
    config_path = tmp_path / "agent.json"
    config_path.write_text(json.dumps(agent_config))
    try:
        assert main(["device", "--config", str(config_path)]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["accepted"] == 5
        assert summary["ticks"] == 5
    finally:
        server.stop()
