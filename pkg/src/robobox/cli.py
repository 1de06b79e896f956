"""Command line entry point.

Subcommands: ``serve`` (run the daemon), ``validate-config``,
``export`` (offline NDJSON dump) and ``offload`` (push sealed segments
to the central server). Exit codes: 0 ok, 2 config error, 3 runtime
init error.
"""

from __future__ import annotations

import argparse
import logging
import signal
import sys
import threading

from .config import ConfigError
from .daemon import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_RUNTIME,
    Daemon,
    DaemonStartError,
    load_daemon_config,
    open_store_for,
)
from .store import InvalidRange, QuerySpec

logger = logging.getLogger(__name__)


def _add_common(parser):
    parser.add_argument("--config", required=True, help="daemon config YAML")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robobox", description="Robot black box and monitoring daemon")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the daemon")
    _add_common(serve)
    serve.add_argument("--mode", choices=("robot", "central"), help="override the configured mode")
    serve.add_argument("--listen", help="override listen addr:port")
    serve.add_argument("--robot-id", help="override the robot id")
    serve.add_argument("--replay-fast", action="store_true", help="replay sources at full speed")

    validate = sub.add_parser("validate-config", help="parse and validate all configuration")
    _add_common(validate)

    export = sub.add_parser("export", help="dump recorded data as NDJSON")
    _add_common(export)
    export.add_argument("--from", dest="from_ts", type=float, required=True)
    export.add_argument("--to", dest="to_ts", type=float, required=True)
    export.add_argument("--vars", default="*", help="comma-separated variable patterns")
    export.add_argument("--out", default="-", help="output file, '-' for stdout")

    offload = sub.add_parser("offload", help="upload sealed segments to the central server")
    _add_common(offload)
    offload.add_argument("--endpoint", help="override the configured offload endpoint")
    return parser


def _load(args):
    cfg = load_daemon_config(args.config)
    if getattr(args, "mode", None):
        cfg.mode = args.mode
    if getattr(args, "listen", None):
        cfg.listen = args.listen
    if getattr(args, "robot_id", None):
        cfg.robot_id = args.robot_id
    if getattr(args, "replay_fast", False):
        cfg.replay_fast = True
    return cfg


def cmd_serve(args) -> int:
    try:
        cfg = _load(args)
    except (OSError, ConfigError) as exc:
        print(f"robobox: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    daemon = Daemon(cfg)
    try:
        daemon.start()
    except DaemonStartError as exc:
        print(f"robobox: startup failed in {exc.subsystem}: {exc.cause}", file=sys.stderr)
        daemon.shutdown()
        return EXIT_RUNTIME
    stop = threading.Event()

    def _request_stop(signum, frame):
        stop.set()

    signal.signal(signal.SIGTERM, _request_stop)
    signal.signal(signal.SIGINT, _request_stop)
    print(f"robobox: {cfg.mode} mode, listening on {daemon.base_url}")
    stop.wait()
    daemon.shutdown()
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        cfg = _load(args)
        # instantiate without starting listeners by checking files eagerly
        from .config import load_blackbox_config, load_component_specs
        from .diagnosis import load_symptom_mappings, parse_rules
        from .testflow import load_workflow
        from pathlib import Path

        if cfg.mode == "robot":
            load_blackbox_config(Path(cfg.blackbox).read_text())
            load_component_specs(cfg.components_dir)
            if cfg.rules is not None:
                parse_rules(Path(cfg.rules).read_text())
            if cfg.symptom_mappings is not None:
                load_symptom_mappings(Path(cfg.symptom_mappings).read_text())
            if cfg.workflows_dir is not None:
                for path in sorted(Path(cfg.workflows_dir).glob("*.yaml")):
                    load_workflow(path.read_text())
    except (OSError, ConfigError, Exception) as exc:
        print(f"robobox: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print("robobox: configuration ok")
    return EXIT_OK


def cmd_export(args) -> int:
    try:
        cfg = _load(args)
        store = open_store_for(cfg)
    except (OSError, ConfigError) as exc:
        print(f"robobox: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        q = QuerySpec(tuple(v for v in args.vars.split(",") if v), args.from_ts, args.to_ts)
    except InvalidRange as exc:
        print(f"robobox: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.out == "-":
            count = store.export(q, sys.stdout)
        else:
            with open(args.out, "w") as sink:
                count = store.export(q, sink)
        print(f"robobox: exported {count} records", file=sys.stderr)
        return EXIT_OK
    finally:
        store.close()


def cmd_offload(args) -> int:
    try:
        cfg = _load(args)
        store = open_store_for(cfg)
    except (OSError, ConfigError) as exc:
        print(f"robobox: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    endpoint = args.endpoint or store.offload_endpoint
    if not endpoint:
        print("robobox: no offload endpoint configured", file=sys.stderr)
        store.close()
        return EXIT_CONFIG
    report = store.offload(endpoint)
    store.close()
    print(
        f"robobox: uploaded {len(report.uploaded)} segment(s), "
        f"skipped {len(report.skipped)}, failed {len(report.failed)}"
    )
    for segment_id, reason in report.failed:
        print(f"robobox: segment {segment_id} failed: {reason}", file=sys.stderr)
    return EXIT_OK if report.ok else EXIT_RUNTIME


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    handlers = {
        "serve": cmd_serve,
        "validate-config": cmd_validate,
        "export": cmd_export,
        "offload": cmd_offload,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
