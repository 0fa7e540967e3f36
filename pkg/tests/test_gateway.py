from __future__ import annotations

import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from edgesim.bus import Broker
from edgesim.cloud import CloudHub
from edgesim.core import DeviceDescriptor, DeviceKind, Metric, MetricClass, Principal, Role, TelemetryReading
from edgesim.gateway import (
    Access,
    AccessPolicy,
    AlertEvent,
    BusUplink,
    Comparator,
    Decision,
    EdgeGateway,
    ForwardQueue,
    GatewayConfig,
    InvalidReadingError,
    LinkError,
    MetricMismatchError,
    RPM_POLICY,
    Rule,
    Severity,
    UnknownDeviceError,
    evaluate_rule,
    redact,
)
from edgesim.shadow import ShadowRegistry

SPO2_LOW = Rule("spo2_low", Metric.SPO2_PCT, Comparator.LT, 85.0, Severity.CRITICAL, 300_000,
                frozenset({Role.PRACTITIONER}))
DOOR = Rule("open_door", Metric.DOOR_ANGLE_DEG, Comparator.GT, 30.0, Severity.INFO, 0,
            frozenset({Role.FAMILY}), "open-door")
TEMP = Rule("temp_high", Metric.BODY_TEMP_F, Comparator.GE, 103.0, Severity.WARNING, 300_000,
            frozenset({Role.PRACTITIONER}))

DEVICES = [
    DeviceDescriptor("ox", DeviceKind.OXIMETER, "bob", "gw"),
    DeviceDescriptor("door", DeviceKind.DOOR_SENSOR, "bob", "gw"),
    DeviceDescriptor("therm", DeviceKind.THERMOMETER, "bob", "gw"),
    DeviceDescriptor("tag", DeviceKind.POSITION_TAG, "bob", "gw"),
]


def rd(device, metric, value, ts=0, seq=1):
    return TelemetryReading(device, metric, value, ts, seq)


class ListUplink:
    def __init__(self):
        self.sent = []
        self.reconciled = []

    def send(self, gateway_id, entry):
        self.sent.append(entry)

    def reconcile(self, device_id):
        self.reconciled.append(device_id)


def make_gw(**kw):
    kw.setdefault("uplink", ListUplink())
    return EdgeGateway("gw", DEVICES, [SPO2_LOW, DOOR, TEMP], RPM_POLICY, **kw)


# -- rule evaluation -----------------------------------------------------

def test_spo2_just_below_threshold_fires_critical():
    gw = make_gw()
    [a] = gw.ingest(rd("ox", Metric.SPO2_PCT, 84.9))
    assert a.severity is Severity.CRITICAL and a.rule_id == "spo2_low" and a.observed_value == 84.9


def test_spo2_at_threshold_is_silent():
    assert make_gw().ingest(rd("ox", Metric.SPO2_PCT, 85.0)) == []


def test_door_open_notification():
    [a] = make_gw().ingest(rd("door", Metric.DOOR_ANGLE_DEG, 31))
    assert a.message == "open-door"
    assert make_gw().ingest(rd("door", Metric.DOOR_ANGLE_DEG, 30)) == []


def test_temperature_at_103_alerts_practitioner():
    [a] = make_gw().ingest(rd("therm", Metric.BODY_TEMP_F, 103))
    assert Role.PRACTITIONER in a.recipients


def test_evaluate_rule_debounce_examples():
    rule = Rule("r", Metric.SPO2_PCT, Comparator.LT, 85.0, debounce_ms=60_000)
    assert evaluate_rule(rule, rd("ox", Metric.SPO2_PCT, 80, ts=0), None) is not None
    assert evaluate_rule(rule, rd("ox", Metric.SPO2_PCT, 80, ts=10_000), 0) is None
    assert evaluate_rule(rule, rd("ox", Metric.SPO2_PCT, 80, ts=60_000), 0) is not None


def test_evaluate_rule_metric_mismatch():
    with pytest.raises(MetricMismatchError):
        evaluate_rule(SPO2_LOW, rd("therm", Metric.BODY_TEMP_F, 99), None)


def test_rule_validation():
    with pytest.raises(ValueError):
        Rule("r", Metric.SPO2_PCT, Comparator.OUTSIDE_RANGE, (90.0, 90.0))
    with pytest.raises(ValueError):
        Rule("r", Metric.SPO2_PCT, Comparator.LT, 85.0, debounce_ms=-1)


def test_rule_dict_round_trip():
    r = Rule.from_dict({"rule_id": "bp", "metric": "bp_systolic_mmHg", "comparator": "outside_range",
                        "lo": 90, "hi": 140, "severity": "warning", "recipients": ["practitioner"]})
    assert r.threshold == (90.0, 140.0) and r.debounce_ms == 300_000
    assert Rule.from_dict(r.to_dict()) == r


def oracle_fires(comparator, threshold, value, ts, last, debounce):
    ok = {
        "lt": lambda: value < threshold,
        "le": lambda: value <= threshold,
        "gt": lambda: value > threshold,
        "ge": lambda: value >= threshold,
        "outside_range": lambda: not (threshold[0] <= value <= threshold[1]),
    }[comparator]()
    return ok and (last is None or ts - last >= debounce)


def test_random_rule_reading_pairs_match_oracle():
    rng = random.Random(9)
    for _ in range(5000):
        comp = rng.choice(["lt", "le", "gt", "ge", "outside_range"])
        if comp == "outside_range":
            lo = rng.randint(80, 95)
            threshold = (float(lo), float(lo + rng.randint(1, 5)))
        else:
            threshold = float(rng.randint(80, 100))
        debounce = rng.choice([0, 1000, 60_000])
        rule = Rule("r", Metric.SPO2_PCT, Comparator(comp), threshold, debounce_ms=debounce)
        value = float(rng.randint(75, 100))
        ts = rng.randint(0, 100_000)
        last = rng.choice([None, rng.randint(0, ts)])
        fired = evaluate_rule(rule, rd("ox", Metric.SPO2_PCT, value, ts), last) is not None
        assert fired is oracle_fires(comp, threshold, value, ts, last, debounce)


@given(st.lists(st.tuples(st.integers(0, 5000), st.floats(70, 100)), max_size=80),
       st.sampled_from([0, 250, 1000]))
def test_alerts_respect_debounce(steps, debounce):
    rule = Rule("r", Metric.SPO2_PCT, Comparator.LT, 85.0, debounce_ms=debounce)
    gw = EdgeGateway("gw", DEVICES[:1], [rule], uplink=ListUplink())
    ts = 0
    for seq, (dt, v) in enumerate(steps, 1):
        ts += dt
        gw.ingest(rd("ox", Metric.SPO2_PCT, v, ts, seq))
    times = [a.ts for a in gw.alerts]
    assert all(b - a >= debounce for a, b in zip(times, times[1:]))


def test_debounce_is_per_device():
    gw = EdgeGateway("gw", [DEVICES[0], DeviceDescriptor("ox2", DeviceKind.OXIMETER, "c", "gw")],
                     [SPO2_LOW], uplink=ListUplink())
    assert len(gw.ingest(rd("ox", Metric.SPO2_PCT, 80, 0, 1))) == 1
    assert len(gw.ingest(rd("ox2", Metric.SPO2_PCT, 80, 0, 1))) == 1
    assert gw.ingest(rd("ox", Metric.SPO2_PCT, 80, 1000, 2)) == []


def test_identical_inputs_identical_alerts():
    rng = random.Random(4)
    readings = [rd("ox", Metric.SPO2_PCT, float(rng.randint(80, 90)), i * 100_000, i + 1) for i in range(200)]
    runs = []
    for _ in range(2):
        gw = make_gw()
        for r in readings:
            gw.ingest(r)
        runs.append([a.to_dict() for a in gw.alerts])
    assert runs[0] == runs[1] and runs[0]


# -- ingest errors and local delivery --------------------------------------

def test_unknown_device_and_invalid_reading():
    gw = make_gw()
    with pytest.raises(UnknownDeviceError):
        gw.ingest(rd("stranger", Metric.SPO2_PCT, 97))
    with pytest.raises(InvalidReadingError):
        gw.ingest(rd("ox", Metric.SPO2_PCT, 101))
    gw.ingest(rd("ox", Metric.SPO2_PCT, 97, 0, 1))
    with pytest.raises(InvalidReadingError):
        gw.ingest(rd("ox", Metric.SPO2_PCT, 97, 1, 1))


def test_local_subscribers_receive_alerts():
    gw = make_gw()
    got = []
    gw.subscribe_local(got.append)
    gw.ingest(rd("ox", Metric.SPO2_PCT, 80))
    assert [a.rule_id for a in got] == ["spo2_low"]


def test_link_up_forwards_immediately():
    up = ListUplink()
    gw = make_gw(uplink=up)
    for seq in range(1, 50):
        gw.ingest(rd("ox", Metric.SPO2_PCT, 95, seq, seq))
        assert len(gw.queue) <= 1
    assert len(gw.queue) == 0 and len(up.sent) == 49


def test_offline_alert_is_flagged_late_for_cloud():
    up = ListUplink()
    gw = make_gw(uplink=up)
    gw.set_link(False)
    [local] = gw.ingest(rd("ox", Metric.SPO2_PCT, 80, 10, 1))
    assert not local.delivered_late
    gw.set_link(True)
    cloud_alerts = [e for e in up.sent if isinstance(e, AlertEvent)]
    assert cloud_alerts[0].delivered_late and cloud_alerts[0].ts == 10


def test_drain_is_fifo_and_requests_reconcile():
    up = ListUplink()
    gw = make_gw(uplink=up)
    gw.set_link(False)
    for seq in range(1, 6):
        gw.ingest(rd("ox", Metric.SPO2_PCT, 95, seq, seq))
    assert up.sent == []
    state = gw.set_link(True)
    assert state.up and state.queue_depth == 0
    assert [e.seq for e in up.sent] == [1, 2, 3, 4, 5]
    assert up.reconciled == ["ox", "door", "therm", "tag"]


# -- queue -----------------------------------------------------------------

def test_forward_queue_drop_oldest():
    q = ForwardQueue(3)
    assert [q.push(i) for i in range(5)] == [None, None, None, 0, 1]
    assert list(q) == [2, 3, 4] and q.dropped == 2 and q.high_water == 3


def test_gateway_overflow_writes_audit_first():
    events = []
    gw = make_gw(queue_capacity=10, observer=lambda k, p: events.append((k, p)))
    gw.set_link(False)
    for seq in range(1, 13):
        gw.ingest(rd("ox", Metric.SPO2_PCT, 95, seq, seq))
    assert len(gw.queue) == 10 and gw.queue.dropped == 2
    overflow = [p for k, p in events if k == "queue_overflow"]
    assert [p["observed_value"] for p in overflow] == ["ox#1", "ox#2"]
    assert [a.rule_id for a in gw.audit] == ["queue_overflow"] * 2


# -- end-to-end store and forward -------------------------------------------

def cloud_pipeline(capacity=100_000):
    broker = Broker()
    broker.register("cloud", "c")
    broker.register("gw", "g")
    reg = ShadowRegistry()
    for d in DEVICES:
        reg.register(d.device_id, d.owner)
    hub = CloudHub(broker.connect("cloud", "c"), reg)
    gw = make_gw(uplink=BusUplink(broker.connect("gw", "g")), queue_capacity=capacity)
    return gw, hub


def test_thousand_offline_readings_arrive_in_order():
    gw, hub = cloud_pipeline()
    gw.set_link(False)
    for seq in range(1, 1001):
        gw.ingest(rd("ox", Metric.SPO2_PCT, 90 + seq % 9, seq * 1000, seq))
    assert hub.readings == []
    gw.set_link(True)
    assert [r.seq for r in hub.readings_for("ox")] == list(range(1, 1001))
    assert hub.duplicates == 0


class FlakyUplink:
    """Fails randomly before or after delivering; the latter creates duplicates."""

    def __init__(self, inner, rng):
        self.inner = inner
        self.rng = rng
        self.failures = 0

    def send(self, gateway_id, entry):
        roll = self.rng.random()
        if roll < 0.05:
            self.failures += 1
            raise LinkError("dropped before send")
        self.inner.send(gateway_id, entry)
        if roll > 0.95:
            self.failures += 1
            raise LinkError("ack lost")

    def reconcile(self, device_id):
        self.inner.reconcile(device_id)


def test_link_flapping_during_drain_loses_nothing():
    gw, hub = cloud_pipeline()
    flaky = FlakyUplink(gw.uplink, random.Random(21))
    gw.uplink = flaky
    gw.set_link(False)
    ingested = []
    rng = random.Random(5)
    for seq in range(1, 801):
        dev, metric = rng.choice([("ox", Metric.SPO2_PCT), ("therm", Metric.BODY_TEMP_F)])
        value = 95.0 if metric is Metric.SPO2_PCT else 98.6
        r = rd(dev, metric, value, seq, seq)
        gw.ingest(r)
        ingested.append((dev, seq))
        if rng.random() < 0.05:
            gw.set_link(not gw.link_up)
    while len(gw.queue):
        gw.set_link(False)
        gw.set_link(True)
    assert flaky.failures > 0 and hub.duplicates > 0
    assert sorted((r.device_id, r.seq) for r in hub.readings) == sorted(ingested)
    for dev in ("ox", "therm"):
        seqs = [r.seq for r in hub.readings_for(dev)]
        assert seqs == sorted(seqs)


# -- access policy -----------------------------------------------------------

def test_read_decisions():
    gw = make_gw()
    assert gw.authorize_read(Principal("dr", Role.PRACTITIONER), "ox", Metric.SPO2_PCT) is Decision.ALLOW_FULL
    assert gw.authorize_read(Principal("sis", Role.FAMILY), "ox", Metric.SPO2_PCT) is Decision.ALLOW_VIEW
    assert gw.authorize_read(Principal("mayor", Role.LOCAL_AUTHORITY), "tag", Metric.POSITION_FT) is Decision.DENY
    assert gw.authorize_read(Principal("bob", Role.PATIENT), "ox", Metric.SPO2_PCT) is Decision.ALLOW_FULL
    assert gw.authorize_read(Principal("eve", Role.PATIENT), "ox", Metric.SPO2_PCT) is Decision.DENY


def test_patient_keeps_full_access_to_own_vitals_with_empty_policy():
    gw = EdgeGateway("gw", DEVICES, policy=AccessPolicy())
    assert gw.authorize_read(Principal("bob", Role.PATIENT), "therm", Metric.BODY_TEMP_F) is Decision.ALLOW_FULL
    assert gw.authorize_read(Principal("bob", Role.PATIENT), "door", Metric.DOOR_ANGLE_DEG) is Decision.DENY


def test_view_redaction():
    gw = make_gw()
    sis = Principal("sis", Role.FAMILY)
    assert gw.read(sis, rd("therm", Metric.BODY_TEMP_F, 101.6)) == 102
    assert gw.read(sis, rd("tag", Metric.POSITION_FT, (3.0, 4.0)), zone_of=lambda x, y: "LZ") == "LZ"
    assert gw.read(Principal("dr", Role.PRACTITIONER), rd("therm", Metric.BODY_TEMP_F, 101.6)) == 101.6
    with pytest.raises(PermissionError):
        redact(1.0, Metric.SPO2_PCT, Decision.DENY)


RANK = {Decision.DENY: 0, Decision.ALLOW_VIEW: 1, Decision.ALLOW_FULL: 2}
roles = st.sampled_from(list(Role))
classes = st.sampled_from(list(MetricClass))
policies = st.dictionaries(roles, st.dictionaries(classes, st.sampled_from(list(Access))))


@given(policies, roles, st.one_of(st.none(), classes), roles, st.sampled_from(list(Metric)),
       st.sampled_from(["bob", "eve"]))
def test_removing_policy_entries_never_grants(perms, role, cls, who, metric, pid):
    pol = AccessPolicy(perms)
    smaller = pol.without(role, cls)
    p = Principal(pid, who)
    assert RANK[smaller.decide(p, "bob", metric)] <= RANK[pol.decide(p, "bob", metric)]


def test_gateway_config_document(tmp_path):
    import json
    doc = {"gateway_id": "gw-x", "token": "t", "queue_capacity": 5,
           "devices": [{"device_id": "ox", "kind": "oximeter", "owner": "bob"}],
           "rules": [SPO2_LOW.to_dict()], "policy": {"family": {"vitals": "view"}}}
    path = tmp_path / "gw.json"
    path.write_text(json.dumps(doc))
    cfg = GatewayConfig.load(path)
    gw = cfg.build(uplink=ListUplink())
    assert gw.queue.capacity == 5 and gw.rules == [SPO2_LOW]
    assert gw.authorize_read(Principal("s", Role.FAMILY), "ox", Metric.SPO2_PCT) is Decision.ALLOW_VIEW
