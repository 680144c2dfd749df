import time
from datetime import timedelta

import pytest
from hypothesis import given, settings, strategies as st

from incuwatch.alerts import (
    ACKNOWLEDGED,
    ACTIVE,
    DEFAULT_RULES,
    RESOLVED,
    Alert,
    AlertConflict,
    AlertNotFound,
    AlertRule,
    AlertTransition,
    ChannelAlertEngine,
    LogSink,
    NotificationDispatcher,
    RuleState,
    WebhookSink,
    evaluate,
)
from incuwatch.wire import parse_timestamp

T0 = parse_timestamp("2026-01-01T00:00:00Z")

SKIN_RULE = AlertRule(field="field6", lower=36.5, upper=37.2, debounce_n=3, clear_n=5,
                      severity="critical", label="skin-temp")


def ts(i):
    return T0 + timedelta(seconds=i)


def feed(engine, values, rule_field="field6", start=0):
    out = []
    for i, value in enumerate(values):
        out.extend(engine.evaluate_update({rule_field: value}, ts(start + i)))
    return out


def test_three_consecutive_breaches_raise_on_third():
    engine = ChannelAlertEngine(1, [SKIN_RULE])
    transitions = feed(engine, [37.5, 37.6, 37.4])
    assert len(transitions) == 1
    assert transitions[0].state == ACTIVE
    assert transitions[0].ts == ts(2)
    assert transitions[0].value == 37.4


def test_broken_streak_never_raises():
    engine = ChannelAlertEngine(1, [SKIN_RULE])
    assert feed(engine, [37.5, 36.8, 37.5, 37.6]) == []


def test_resolve_on_fifth_in_band_sample():
    engine = ChannelAlertEngine(1, [SKIN_RULE])
    transitions = feed(engine, [37.5, 37.5, 37.5, 37.0, 37.0, 37.0, 37.0, 37.0])
    assert [t.state for t in transitions] == [ACTIVE, RESOLVED]
    assert transitions[1].ts == ts(7)


def test_no_duplicate_active_alert_per_rule():
    engine = ChannelAlertEngine(1, [SKIN_RULE])
    transitions = feed(engine, [37.5] * 20)
    assert len(transitions) == 1
    assert len(engine.open_alerts()) == 1


def test_band_is_inclusive_at_the_edges():
    engine = ChannelAlertEngine(1, [SKIN_RULE])
    assert feed(engine, [36.5, 37.2] * 10) == []


def test_missing_field_changes_nothing():
    engine = ChannelAlertEngine(1, [SKIN_RULE])
    transitions = []
    transitions += engine.evaluate_update({"field6": 37.5}, ts(0))
    transitions += engine.evaluate_update({"field6": 37.5}, ts(1))
    transitions += engine.evaluate_update({}, ts(2))
    transitions += engine.evaluate_update({"field6": None}, ts(3))
    transitions += engine.evaluate_update({"field6": 37.5}, ts(4))
    assert len(transitions) == 1
    assert transitions[0].ts == ts(4)


def test_upper_only_rule():
    gas = AlertRule(field="field4", upper=300.0, debounce_n=3, severity="critical", label="gas")
    engine = ChannelAlertEngine(1, [gas])
    transitions = feed(engine, [100, 250, 301, 310, 900], rule_field="field4")
    assert len(transitions) == 1
    assert transitions[0].ts == ts(4)


def test_alert_ids_monotone_per_channel():
    engine = ChannelAlertEngine(1, [SKIN_RULE])
    feed(engine, [37.5] * 3 + [37.0] * 5 + [37.5] * 3)
    raised = sorted(a.alert_id for a in engine._alerts.values())
    assert raised == [1, 2]


def test_acknowledge_lifecycle():
    engine = ChannelAlertEngine(1, [SKIN_RULE])
    (raisetr,) = feed(engine, [37.5, 37.5, 37.5])
    alert, transition = engine.acknowledge(raisetr.alert_id, "nurse-a", ts(10))
    assert alert.state == ACKNOWLEDGED
    assert alert.acked_by == "nurse-a"
    assert transition.state == ACKNOWLEDGED
    with pytest.raises(AlertConflict):
        engine.acknowledge(raisetr.alert_id, "nurse-b", ts(11))


def test_acknowledged_alert_still_resolves():
    engine = ChannelAlertEngine(1, [SKIN_RULE])
    (raisetr,) = feed(engine, [37.5, 37.5, 37.5])
    engine.acknowledge(raisetr.alert_id, "nurse-a", ts(10))
    transitions = feed(engine, [37.0] * 5, start=11)
    assert [t.state for t in transitions] == [RESOLVED]
    alert = engine.get(raisetr.alert_id)
    assert alert.raised_at <= alert.acked_at <= alert.resolved_at


def test_ack_unknown_and_resolved_alerts():
    engine = ChannelAlertEngine(1, [SKIN_RULE])
    with pytest.raises(AlertNotFound):
        engine.acknowledge(99, "x", ts(0))
    (raisetr,) = feed(engine, [37.5, 37.5, 37.5])
    feed(engine, [37.0] * 5, start=3)
    with pytest.raises(AlertConflict):
        engine.acknowledge(raisetr.alert_id, "x", ts(20))


def test_default_rules_validate():
    for rule in DEFAULT_RULES:
        rule.validate()


def test_rule_validation_rejects_bad_shapes():
    with pytest.raises(ValueError):
        AlertRule(field="field1", label="no-bounds").validate()
    with pytest.raises(ValueError):
        AlertRule(field="field1", lower=5.0, upper=1.0).validate()
    with pytest.raises(ValueError):
        AlertRule(field="field9", upper=1.0).validate()
    with pytest.raises(ValueError):
        AlertRule(field="field1", upper=1.0, debounce_n=0).validate()
    with pytest.raises(ValueError):
        AlertRule(field="field1", upper=1.0, severity="fatal").validate()


def reference_transitions(rule, values):
    """Brute-force lifecycle scan used as the oracle for the engine."""
    out = []
    active = False
    breach_run = 0
    clear_run = 0
    for i, value in enumerate(values):
        in_band = (rule.lower is None or value >= rule.lower) and (
            rule.upper is None or value <= rule.upper
        )
        if in_band:
            clear_run += 1
            breach_run = 0
        else:
            breach_run += 1
            clear_run = 0
        if not active and breach_run == rule.debounce_n:
            out.append((i, ACTIVE))
            active = True
            breach_run = clear_run = 0
        elif active and clear_run == rule.clear_n:
            out.append((i, RESOLVED))
            active = False
            breach_run = clear_run = 0
    return out


@given(
    values=st.lists(st.floats(min_value=35.5, max_value=38.5, allow_nan=False), min_size=1, max_size=300),
    debounce=st.integers(min_value=1, max_value=5),
    clear=st.integers(min_value=1, max_value=5),
)
@settings(max_examples=200, deadline=None)
def test_engine_matches_brute_force_reference(values, debounce, clear):
    rule = AlertRule(field="field6", lower=36.5, upper=37.2, debounce_n=debounce,
                     clear_n=clear, severity="critical", label="skin-temp")
    engine = ChannelAlertEngine(1, [rule])
    got = []
    for i, value in enumerate(values):
        for transition in engine.evaluate_update({"field6": value}, ts(i)):
            got.append((i, transition.state))
    assert got == reference_transitions(rule, values)


def test_evaluate_is_pure_in_rule_state():
    state = RuleState()
    s1, edge1 = evaluate(state, SKIN_RULE, 37.5, ts(0))
    s2, edge2 = evaluate(state, SKIN_RULE, 37.5, ts(0))
    assert (s1, edge1) == (s2, edge2)
    assert state == RuleState()


def make_transition(state=ACTIVE):
    return AlertTransition(
        alert_id=1, channel_id=7, label="gas", state=state,
        field="field4", value=600.0, ts=T0, severity="critical",
    )


def test_webhook_sink_single_post_when_healthy(webhook_server):
    sink = WebhookSink(webhook_server.url, backoff_s=(0.01, 0.01, 0.01))
    sink.deliver(make_transition())
    assert len(webhook_server.requests) == 1
    path, body = webhook_server.requests[0]
    assert b'"alert_id": 1' in body or b'"alert_id":1' in body


def test_webhook_sink_four_attempts_then_drop(webhook_server):
    webhook_server.respond_status = 500
    sink = WebhookSink(webhook_server.url, backoff_s=(0.01, 0.01, 0.01))
    sink.deliver(make_transition())  # must not raise
    assert len(webhook_server.requests) == 4


def test_webhook_sink_unreachable_does_not_raise():
    sink = WebhookSink("http://127.0.0.1:1/hook", backoff_s=(0.0, 0.0, 0.0), timeout_s=0.2)
    sink.deliver(make_transition())


def test_dispatcher_delivers_in_order(webhook_server):
    sink = WebhookSink(webhook_server.url, backoff_s=())
    dispatcher = NotificationDispatcher([LogSink(), sink])
    for i in range(5):
        dispatcher.dispatch(make_transition())
    dispatcher.drain()
    assert len(webhook_server.requests) == 5
    dispatcher.close()


def test_log_sink_logs_one_line_per_transition(caplog):
    sink = LogSink()
    with caplog.at_level("INFO", logger="incuwatch.alerts"):
        sink.deliver(make_transition())
        sink.deliver(make_transition(state=RESOLVED))
    assert len([r for r in caplog.records if "alert channel=" in r.message]) == 2
