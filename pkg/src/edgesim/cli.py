"""``sim`` command line: run, validate, replay, report, broker."""
from __future__ import annotations

import argparse
import asyncio
import json
import logging
import sys
import time

from . import kernels
from .bus import Broker
from .bus.server import BrokerServer, parse_addr
from .scenario import MalformedLogError, ScenarioError, load, read_log, render, run, summarize, validate

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        scenario = load(args.scenario)
    except ScenarioError as exc:
        for d in exc.diagnostics:
            print(f"{args.scenario}: {d}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(exc, file=sys.stderr)
        return EXIT_VALIDATION
    result = run(scenario, seed=args.seed, workers=args.workers, out_dir=args.out, speed=args.speed)
    for name, path in sorted(result.outputs.items()):
        print(f"{name}: {path}")
    print(f"events: {len(result.log.records)} digest: {result.log.digest()} backend: {kernels.BACKEND}")
    return EXIT_OK


def _cmd_validate(args: argparse.Namespace) -> int:
    diags = validate(args.scenario)
    for d in diags:
        print(f"{args.scenario}: {d}")
    if diags:
        return EXIT_VALIDATION
    print(f"{args.scenario}: ok")
    return EXIT_OK


def _cmd_replay(args: argparse.Namespace) -> int:
    records = read_log(args.log)
    for line in render(records, kind=args.kind, source=args.source):
        print(line)
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    print(json.dumps(summarize(read_log(args.log)), indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_broker(args: argparse.Namespace) -> int:
    host, port = parse_addr(args.listen)
    broker = Broker(clock=lambda: time.time_ns() // 1_000_000)
    clients = dict(c.split("=", 1) for c in args.client)
    if args.clients:
        with open(args.clients, encoding="utf-8") as fh:
            clients.update(json.load(fh))
    for cid, token in clients.items():
        broker.register(cid, token)
    server = BrokerServer(broker, host, port)

    async def main() -> None:
        await server.start()
        print(f"broker listening on {server.host}:{server.port} ({len(clients)} clients provisioned)", flush=True)
        await server.serve_forever()

    try:
        asyncio.run(main())
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sim", description="Deterministic edge/cloud IoT simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario and write events.jsonl / report.json / model.json")
    r.add_argument("--scenario", required=True, help="scenario file or packaged scenario name")
    r.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--workers", type=int, default=1, help="threads for the concurrent mode (same log)")
    r.add_argument("--speed", type=float, default=None,
                   help="demo only: run against wall time at this many simulated ms per ms")
    r.set_defaults(func=_cmd_run)

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("--scenario", required=True)
    v.set_defaults(func=_cmd_validate)

    rp = sub.add_parser("replay", help="render an event log as a timeline")
    rp.add_argument("--log", required=True)
    rp.add_argument("--kind")
    rp.add_argument("--source")
    rp.set_defaults(func=_cmd_replay)

    rep = sub.add_parser("report", help="summary report of an event log")
    rep.add_argument("--log", required=True)
    rep.set_defaults(func=_cmd_report)

    b = sub.add_parser("broker", help="standalone TCP broker for external clients")
    b.add_argument("--listen", default="127.0.0.1:1884", help="host:port")
    b.add_argument("--client", action="append", default=[], metavar="ID=TOKEN", help="provision a client")
    b.add_argument("--clients", help="JSON file mapping client_id to token")
    b.set_defaults(func=_cmd_broker)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except MalformedLogError as exc:
        print(f"malformed log: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
