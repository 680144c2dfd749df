import json
from datetime import timedelta

import pytest

from incuwatch.store import ChannelLog, StoreCorruptionError, channel_log_path
from incuwatch.wire import FeedEntry, parse_timestamp

T0 = parse_timestamp("2026-01-01T00:00:00Z")


def entry(i, **fields):
    defaults = {"field1": f"{30 + i}.0"}
    defaults.update(fields)
    return FeedEntry(entry_id=i, created_at=T0 + timedelta(seconds=i), fields=defaults)


def fresh_log(tmp_path, channel_id=1):
    return ChannelLog.open(channel_log_path(tmp_path, channel_id), channel_id)


def test_append_returns_id_and_writes_one_line(tmp_path):
    log = fresh_log(tmp_path)
    assert log.append(entry(1)) == 1
    lines = log.path.read_bytes().splitlines()
    assert len(lines) == 1
    doc = json.loads(lines[0])
    assert doc["entry_id"] == 1
    assert doc["field1"] == "31.0"
    assert doc["field8"] is None


def test_append_rejects_out_of_order_ids(tmp_path):
    log = fresh_log(tmp_path)
    log.append(entry(1))
    with pytest.raises(ValueError):
        log.append(entry(3))
    with pytest.raises(ValueError):
        log.append(entry(1))


def test_thousand_appends_thousand_lines(tmp_path):
    log = fresh_log(tmp_path)
    for i in range(1, 1001):
        log.append(entry(i))
    assert len(log.path.read_bytes().splitlines()) == 1000
    assert log.next_entry_id == 1001


def test_query_last_n(tmp_path):
    log = fresh_log(tmp_path)
    for i in range(1, 6):
        log.append(entry(i))
    assert [e.entry_id for e in log.query(2)] == [4, 5]
    assert log.query(0) == []
    assert [e.entry_id for e in log.query(99)] == [1, 2, 3, 4, 5]


def test_query_window_is_inclusive(tmp_path):
    log = fresh_log(tmp_path)
    for i in range(1, 6):
        log.append(entry(i))
    ts3 = T0 + timedelta(seconds=3)
    assert [e.entry_id for e in log.query(100, start=ts3, end=ts3)] == [3]
    assert [e.entry_id for e in log.query(100, start=ts3)] == [3, 4, 5]
    assert [e.entry_id for e in log.query(100, end=ts3)] == [1, 2, 3]
    assert log.query(100, start=T0 + timedelta(seconds=99)) == []


def test_query_window_applies_before_tail(tmp_path):
    log = fresh_log(tmp_path)
    for i in range(1, 11):
        log.append(entry(i))
    got = log.query(2, end=T0 + timedelta(seconds=5))
    assert [e.entry_id for e in got] == [4, 5]


def test_recover_clean_file(tmp_path):
    log = fresh_log(tmp_path)
    for i in range(1, 4):
        log.append(entry(i))
    log.close()
    reopened = fresh_log(tmp_path)
    assert reopened.next_entry_id == 4
    assert [e.entry_id for e in reopened.query(100)] == [1, 2, 3]


def test_recover_truncates_torn_tail(tmp_path):
    log = fresh_log(tmp_path)
    for i in range(1, 4):
        log.append(entry(i))
    log.close()
    with open(log.path, "ab") as fh:
        fh.write(b'{"created_at":"2026-01-01T00:')  # half a 4th line, no newline
    reopened = fresh_log(tmp_path)
    assert reopened.next_entry_id == 4
    assert reopened.path.read_bytes().endswith(b"\n")
    # appends continue cleanly after truncation
    reopened.append(entry(4))
    assert reopened.count() == 4


def test_recover_rejects_midfile_corruption(tmp_path):
    log = fresh_log(tmp_path)
    for i in range(1, 4):
        log.append(entry(i))
    log.close()
    lines = log.path.read_bytes().splitlines(keepends=True)
    lines[1] = b"garbage\n"
    log.path.write_bytes(b"".join(lines))
    with pytest.raises(StoreCorruptionError):
        fresh_log(tmp_path)


def test_recover_rejects_entry_id_gap(tmp_path):
    log = fresh_log(tmp_path)
    log.append(entry(1))
    log.close()
    with open(log.path, "ab") as fh:
        fh.write((json.dumps(entry(5).to_json_dict()) + "\n").encode())
    with pytest.raises(StoreCorruptionError):
        fresh_log(tmp_path)


def test_crash_consistency_any_truncation_point_yields_prefix(tmp_path):
    log = fresh_log(tmp_path)
    for i in range(1, 6):
        log.append(entry(i))
    log.close()
    raw = log.path.read_bytes()
    other = tmp_path / "crash" / "channel_1.ndjson"
    other.parent.mkdir()
    for cut in range(len(raw) + 1):
        other.write_bytes(raw[:cut])
        recovered = ChannelLog.open(other, 1)
        ids = [e.entry_id for e in recovered.query(100)]
        assert ids == list(range(1, len(ids) + 1))
        recovered.close()


def test_reappending_recovered_entries_reproduces_bytes(tmp_path):
    log = fresh_log(tmp_path)
    for i in range(1, 6):
        log.append(entry(i, field7="1.0"))
    log.close()
    original = log.path.read_bytes()

    replayed = ChannelLog.open(tmp_path / "replay" / "channel_1.ndjson", 1)
    for item in ChannelLog.open(log.path, 1).query(100):
        replayed.append(item)
    assert replayed.path.read_bytes() == original
