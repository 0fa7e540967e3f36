"""Scenario orchestrator: wires devices, gateways, broker, shadows, FL and facilities."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from contextlib import ExitStack
from dataclasses import dataclass, field
from pathlib import Path

from ..bus import Broker, BusMessage
from ..cloud import CloudHub
from ..core import ClockMode, DeviceDescriptor, DeviceKind, Metric, Principal, Role, SimClock, TelemetryReading
from ..fedlearn import ModelState, ParameterServer, TrainerConfig, Worker, two_gaussians
from ..fedlearn.runner import evaluate_global, run_round
from ..gateway import BusUplink, Decision, EdgeGateway, GatewayConfig, InvalidReadingError, Severity
from ..shadow import PermissionDeniedError, ShadowRegistry, VersionConflictError
from ..spatial import DistancePolicy, DistancingMonitor, EntityPosition, OccupancyTracker, PresenceEvent, Zone, plan_sanitize
from .logtools import EventLog, summarize
from .schedules import plan_device, stable_rng
from .spec import Scenario

log = logging.getLogger(__name__)

CLOUD_ID = "cloud"


@dataclass
class RunResult:
    log: EventLog
    report: dict
    model: ModelState | None
    cloud: CloudHub
    gateways: dict[str, EdgeGateway]
    registry: ShadowRegistry
    broker: Broker
    fl_server: ParameterServer | None = None
    outputs: dict[str, Path] = field(default_factory=dict)


class _Facility:
    """Consumes position telemetry from the bus; runs distancing and sanitize planning."""

    def __init__(self, cfg: dict, broker: Broker, clock: SimClock, elog: EventLog):
        self.id = cfg["facility_id"]
        self.tags = set(cfg.get("tags", []))
        self.monitor = DistancingMonitor(DistancePolicy(float(cfg.get("threshold_ft", 6.0)),
                                                        int(cfg.get("cooldown_ms", 60_000))))
        self.tracker = OccupancyTracker()
        self.t1 = int(cfg.get("max_threshold_1", 1))
        self.t2 = int(cfg.get("max_threshold_2", 3))
        self.clock = clock
        self.log = elog
        self.latest: dict[str, tuple[float, float]] = {}
        client = f"facility-{self.id}"
        broker.register(client, client)
        self.session = broker.connect(client, client)
        self.session.subscribe("telemetry/+/position_ft")
        self.session.set_handler(self._on_position)

    def _on_position(self, msg: BusMessage) -> None:
        doc = json.loads(msg.payload)
        if doc["device_id"] in self.tags:
            self.latest[doc["device_id"]] = tuple(doc["value"])

    def snapshot(self, now: int) -> None:
        snap = [EntityPosition(eid, x, y, now) for eid, (x, y) in sorted(self.latest.items())]
        for al in self.monitor.observe(snap):
            self.session.publish("alerts/distancing", json.dumps(al.to_dict(), sort_keys=True))
            self.log.record(now, "distancing", self.id, al.to_dict())

    def presence(self, ev: PresenceEvent) -> None:
        self.tracker.apply(ev)

    def plan(self, now: int) -> None:
        occ = self.tracker.occupancy(self.t1, self.t2)
        plan = [z.value for z in plan_sanitize(occ)]
        if plan:
            doc = {"plan": plan, **occ.to_dict()}
            self.session.publish(f"plans/sanitize/{self.id}", json.dumps(doc, sort_keys=True))
            self.log.record(now, "sanitize_plan", self.id, doc)


def _gateway_observer(elog: EventLog, clock: SimClock, gid: str):
    def observe(kind: str, payload: dict) -> None:
        if kind == "alert" and payload["severity"] == Severity.INFO.value:
            kind = "notification"
        elog.record(clock.now, kind, gid, payload)
    return observe


def run(scenario: Scenario, seed: int | None = None, workers: int = 1, out_dir: str | Path | None = None,
        speed: float | None = None) -> RunResult:
    """Execute a validated scenario to its duration.

    ``workers > 1`` enables the concurrent mode: reading schedules and
    broadcast-schedule FL training run on a thread pool, while all events
    still apply in (ts, registration order), so the log is identical.
    """
    doc = scenario.doc
    seed = scenario.seed if seed is None else seed
    duration = scenario.duration_ms
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        for name in ("shadows.jsonl", "cloud_journal.jsonl", "fl_journal.jsonl"):
            (out / name).unlink(missing_ok=True)

    clock = SimClock(mode=ClockMode.REALTIME if speed else ClockMode.SIMULATED, speed=speed or 1.0)
    elog = EventLog()
    now = lambda: clock.now  # noqa: E731
    broker = Broker(clock=now)

    with ExitStack() as stack:
        executor = stack.enter_context(ThreadPoolExecutor(workers)) if workers > 1 else None

        gw_cfgs = []
        for g in doc.get("gateways", []):
            g = dict(g)
            g["devices"] = list(g.get("devices", [])) + [
                {"device_id": d["device_id"], "kind": d["kind"], "owner": d.get("owner", "")}
                for d in doc.get("devices", []) if d.get("gateway") == g["gateway_id"]
            ]
            gw_cfgs.append(GatewayConfig.from_dict(g))
        device_gw = {d.device_id: cfg.gateway_id for cfg in gw_cfgs for d in cfg.devices}
        policies = {cfg.gateway_id: cfg.policy for cfg in gw_cfgs}
        owners = {d.device_id: d.owner for cfg in gw_cfgs for d in cfg.devices}
        kinds = {d.device_id: d.kind for cfg in gw_cfgs for d in cfg.devices}

        cloud_token = f"cloud-{seed}"
        broker.register(CLOUD_ID, cloud_token)
        cloud_session = broker.connect(CLOUD_ID, cloud_token)

        def authorize_write(p: Principal, device_id: str, owner: str | None) -> bool:
            pol = policies[device_gw[device_id]]
            metric = _primary_metric(kinds[device_id])
            return pol.decide(p, owner, metric) is Decision.ALLOW_FULL

        registry = ShadowRegistry(
            journal_path=out / "shadows.jsonl" if out else None,
            clock=now,
            publish=lambda topic, d: cloud_session.publish(topic, json.dumps(d, sort_keys=True)),
            authorizer=authorize_write,
        )
        stack.callback(registry.close)
        cloud = CloudHub(cloud_session, registry, out / "cloud_journal.jsonl" if out else None,
                         observer=lambda kind, p: elog.record(clock.now, kind, CLOUD_ID, p))
        stack.callback(cloud.close)

        gateways: dict[str, EdgeGateway] = {}
        for cfg in gw_cfgs:
            broker.register(cfg.gateway_id, cfg.token or f"{cfg.gateway_id}-token")
            session = broker.connect(cfg.gateway_id, cfg.token or f"{cfg.gateway_id}-token")
            gateways[cfg.gateway_id] = cfg.build(uplink=BusUplink(session), clock=now,
                                                 observer=_gateway_observer(elog, clock, cfg.gateway_id))
            for d in cfg.devices:
                registry.register(d.device_id, d.owner)
                registry.reconcile(d.device_id)

        rules = {r.rule_id: {"gateway": cfg.gateway_id, "metric": r.metric.value, "severity": r.severity.value}
                 for cfg in gw_cfgs for r in cfg.rules}
        elog.record(0, "start", "sim", {
            "scenario": doc.get("name", scenario.source),
            "seed": seed,
            "duration_ms": duration,
            "gateways": [c.gateway_id for c in gw_cfgs],
            "devices": sorted(device_gw),
            "rules": rules,
        })

        # registration order = tie-break order at equal timestamps
        for lf in doc.get("link_faults", []):
            gw = gateways[lf["gateway_id"]]
            clock.schedule(lf["down_ts"], lambda t, gw=gw: _link_down(gw, registry))
            clock.schedule(lf["up_ts"], lambda t, gw=gw: gw.set_link(True))

        for cmd in doc.get("shadow_commands", []):
            clock.schedule(cmd["at_ms"], lambda t, cmd=cmd: _shadow_command(cmd, registry, elog, t))

        devices = doc.get("devices", [])
        plan_fn = lambda d: plan_device(d, duration, seed)  # noqa: E731
        plans = list(executor.map(plan_fn, devices)) if executor else [plan_fn(d) for d in devices]
        for dev, planned in zip(devices, plans):
            gw = gateways[dev["gateway"]]
            for seq, p in enumerate(planned, 1):
                r = TelemetryReading(dev["device_id"], p.metric, p.value, p.ts, seq)
                clock.schedule(p.ts, lambda t, r=r, gw=gw: _deliver(r, gw, elog))

        for fac_cfg in doc.get("facilities", []):
            fac = _Facility(fac_cfg, broker, clock, elog)
            for ev in fac_cfg.get("presence_events", []):
                pe = PresenceEvent(ev["entity_id"], Zone(ev["zone"]), bool(ev.get("enter", True)), ev["at_ms"])
                clock.schedule(ev["at_ms"], lambda t, pe=pe, fac=fac: fac.presence(pe))
            cad = int(fac_cfg.get("snapshot_cadence_ms", 60_000))
            for t in range(cad, duration + 1, cad):
                clock.schedule(t, fac.snapshot)
            pcad = int(fac_cfg.get("plan_cadence_ms", 60_000))
            for t in range(pcad, duration + 1, pcad):
                clock.schedule(t, fac.plan)

        fl_server = None
        fl_job = doc.get("fl_job")
        if fl_job:
            fl_server, fl_workers = _setup_fl(fl_job, seed, out)
            cfg = TrainerConfig(float(fl_job.get("learning_rate", 0.1)), int(fl_job.get("local_epochs", 1)),
                                int(fl_job.get("minibatch_size", 32)))
            schedule = fl_job.get("schedule", "sequential")
            interval = int(fl_job.get("round_interval_ms", 60_000))
            for k in range(1, int(fl_job.get("rounds", 0)) + 1):
                clock.schedule(k * interval, lambda t, k=k: _fl_round(
                    k, fl_workers, fl_server, cfg, schedule, executor, gateways, elog, t))

        clock.run_until(duration)

        gw_stats = {}
        for gid, gw in gateways.items():
            st = gw.stats()
            st["queued_readings"] = sum(1 for e in gw.queue if isinstance(e, TelemetryReading))
            st["link_up"] = gw.link_up
            gw_stats[gid] = st
        elog.record(clock.now, "stop", "sim", {
            "gateways": gw_stats,
            "cloud_readings": len(cloud.readings),
            "cloud_duplicates": cloud.duplicates,
            "bus_audit": len(broker.audit),
            "fl_stale_discarded": fl_server.stale_discarded if fl_server else 0,
        })

    model = fl_server.download() if fl_server else None
    summary = summarize(elog.records)
    result = RunResult(elog, summary, model, cloud, gateways, registry, broker, fl_server)
    if out is not None:
        elog.write(out / "events.jsonl")
        (out / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        result.outputs = {"events": out / "events.jsonl", "report": out / "report.json"}
        if model is not None:
            (out / "model.json").write_text(json.dumps(model.to_dict(), indent=2) + "\n")
            result.outputs["model"] = out / "model.json"
        for name in ("shadows.jsonl", "cloud_journal.jsonl", "fl_journal.jsonl"):
            if (out / name).exists():
                result.outputs[name.split(".")[0]] = out / name
    return result


_KIND_METRIC = {
    DeviceKind.OXIMETER: Metric.SPO2_PCT,
    DeviceKind.BP_MONITOR: Metric.BP_SYSTOLIC,
    DeviceKind.THERMOMETER: Metric.BODY_TEMP_F,
    DeviceKind.WEARABLE: Metric.PULSE_BPM,
    DeviceKind.DOOR_SENSOR: Metric.DOOR_ANGLE_DEG,
    DeviceKind.MOTION_SENSOR: Metric.PRESENCE_FLAG,
    DeviceKind.CAMERA: Metric.PRESENCE_FLAG,
    DeviceKind.SANITIZER_ROBOT: Metric.PRESENCE_FLAG,
    DeviceKind.POSITION_TAG: Metric.POSITION_FT,
}


def _primary_metric(kind: DeviceKind) -> Metric:
    return _KIND_METRIC[kind]


def _deliver(r: TelemetryReading, gw: EdgeGateway, elog: EventLog) -> None:
    payload = r.to_dict()
    payload["offline"] = not gw.link_up
    elog.record(r.ts, "reading", r.device_id, payload)
    try:
        gw.ingest(r)
    except InvalidReadingError as exc:
        elog.record(r.ts, "rejected", r.device_id, {"seq": r.seq, "reason": str(exc)})


def _link_down(gw: EdgeGateway, registry: ShadowRegistry) -> None:
    gw.set_link(False)
    # the cloud notices the gateway dropping (last-will style)
    for dev in gw.devices:
        registry.mark_offline(dev)


def _shadow_command(cmd: dict, registry: ShadowRegistry, elog: EventLog, t: int) -> None:
    principal = Principal(cmd.get("principal_id", cmd["role"]), Role(cmd["role"]))
    dev = cmd["device_id"]
    try:
        current = registry.get(dev).version
        snap = registry.set_desired(dev, cmd["patch"], principal, expected_version=current)
    except (PermissionDeniedError, VersionConflictError) as exc:
        elog.record(t, "shadow", "cloud", {"device_id": dev, "op": "desired", "error": str(exc),
                                            "principal": principal.principal_id})
        return
    elog.record(t, "shadow", "cloud", {"device_id": dev, "op": "desired", "version": snap.version,
                                        "patch": cmd["patch"], "principal": principal.principal_id,
                                        "connectivity": snap.connectivity.value})


def _setup_fl(job: dict, seed: int, out: Path | None) -> tuple[ParameterServer, list[tuple[Worker, str]]]:
    data_cfg = job.get("data", {})
    mean = float(data_cfg.get("mean", 1.0))
    sigma = float(data_cfg.get("sigma", 0.5))
    d = int(data_cfg.get("d", 2))
    workers = []
    for w in job["workers"]:
        ds = two_gaussians(int(w["samples"]), stable_rng(seed, "fl-data", w["worker_id"]), mean, sigma, d)
        workers.append((Worker(w["worker_id"], ds, stable_rng(seed, "fl-shuffle", w["worker_id"])),
                        w["gateway_id"]))
    limit = job.get("staleness_limit", 8)
    server = ParameterServer(ModelState.zeros(d), float("inf") if limit is None else limit,
                             out / "fl_journal.jsonl" if out else None)
    return server, workers


def _fl_round(k: int, workers: list[tuple[Worker, str]], server: ParameterServer, cfg: TrainerConfig,
              schedule: str, executor, gateways: dict[str, EdgeGateway], elog: EventLog, t: int) -> None:
    # a worker whose gateway has no uplink cannot reach the parameter server this round
    active = [wk for wk, gid in workers if gateways[gid].link_up]
    accepted = stale = 0
    if active:
        accepted, stale = run_round(active, server, cfg, schedule, executor)
    w = server.download()
    loss, acc = evaluate_global([wk for wk, _ in workers], w)
    elog.record(t, "fl_round", "parameter_server", {
        "round": k, "version": w.version, "loss": loss, "accuracy": acc,
        "accepted": accepted, "stale": stale, "participants": len(active),
    })
