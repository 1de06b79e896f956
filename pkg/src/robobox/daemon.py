"""Composition root: wires config, ingest, store, monitors, diagnosis,
test workflows and the HTTP API into one process.

``robot`` mode runs the full recorder-plus-monitoring stack; ``central``
mode runs only the segment receiver and fleet listing. Subsystems start
in dependency order and any init failure aborts startup with a
diagnostic naming the subsystem.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import api as api_mod
from .clock import Clock, WallClock
from .config import (
    ConfigError,
    load_blackbox_config,
    load_component_specs,
    _load_yaml_mapping,
    _require_keys,
)
from .diagnosis import DiagnosisService, load_symptom_mappings, parse_rules
from .ingest import SourceRunner, StoreSink, TransportUnavailable
from .monitors import MonitorScheduler, StatusBus
from .store import BlackBoxStore, QuerySpec
from .testflow import RunRegistry, WorkflowExecutor, run_record

logger = logging.getLogger(__name__)

MODES = ("robot", "central")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class DaemonStartError(Exception):
    """Startup failure; the message names the failing subsystem."""

    def __init__(self, subsystem: str, cause: Exception):
        super().__init__(f"{subsystem}: {cause}")
        self.subsystem = subsystem
        self.cause = cause


@dataclass
class DaemonConfig:
    mode: str
    listen: str = "127.0.0.1:8080"
    robot_id: str = "robot1"
    display_name: str = ""
    blackbox: Path | None = None
    components_dir: Path | None = None
    rules: Path | None = None
    symptom_mappings: Path | None = None
    workflows_dir: Path | None = None
    data_dir: Path | None = None
    ui_dir: Path | None = None
    monitor_period_sec: float = 1.0
    replay_fast: bool = False
    token: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "robot":
            if self.blackbox is None or self.components_dir is None:
                raise ConfigError("robot mode requires 'blackbox' and 'components_dir'")
        if self.mode == "central" and self.data_dir is None:
            raise ConfigError("central mode requires 'data_dir'")

    @property
    def listen_host(self) -> str:
        host, _, _ = self.listen.rpartition(":")
        return host or "127.0.0.1"

    @property
    def listen_port(self) -> int:
        _, _, port = self.listen.rpartition(":")
        return int(port)


_KEYS = (
    "mode",
    "listen",
    "robot_id",
    "display_name",
    "blackbox",
    "components_dir",
    "rules",
    "symptom_mappings",
    "workflows_dir",
    "data_dir",
    "ui_dir",
    "monitor_period_sec",
)


def load_daemon_config(path) -> DaemonConfig:
    """Load a daemon config file; relative paths resolve beside it."""
    path = Path(path)
    doc = _load_yaml_mapping(path.read_text(), f"daemon config {path}")
    _require_keys(doc, ("mode",), tuple(k for k in _KEYS if k != "mode"), "daemon config")
    root = path.parent

    def resolve(key):
        value = doc.get(key)
        return (root / value) if value else None

    return DaemonConfig(
        mode=doc["mode"],
        listen=doc.get("listen", "127.0.0.1:8080"),
        robot_id=doc.get("robot_id", "robot1"),
        display_name=doc.get("display_name", ""),
        blackbox=resolve("blackbox"),
        components_dir=resolve("components_dir"),
        rules=resolve("rules"),
        symptom_mappings=resolve("symptom_mappings"),
        workflows_dir=resolve("workflows_dir"),
        data_dir=resolve("data_dir"),
        ui_dir=resolve("ui_dir"),
        monitor_period_sec=float(doc.get("monitor_period_sec", 1.0)),
        token=os.environ.get("BB_TOKEN") or None,
    )


class Daemon:
    """One running process; build it, then :meth:`start`."""

    def __init__(self, cfg: DaemonConfig, clock: Clock | None = None):
        self.cfg = cfg
        self.clock = clock or WallClock()
        self.store: BlackBoxStore | None = None
        self.sink: StoreSink | None = None
        self.sources: list = []
        self.bus: StatusBus | None = None
        self.monitors: MonitorScheduler | None = None
        self.diagnosis: DiagnosisService | None = None
        self.runs: RunRegistry | None = None
        self.central: api_mod.CentralSystem | None = None
        self.app = None
        self._server = None
        self._server_thread = None
        self._ingest_stop = threading.Event()
        self._started = False
        self._closed = False

    # -- startup -------------------------------------------------------------

    def start(self) -> "Daemon":
        if self.cfg.mode == "central":
            self._start_central()
        else:
            self._start_robot()
        self._started = True
        return self

    def _start_central(self):
        try:
            self.central = api_mod.CentralSystem(self.cfg.data_dir)
        except OSError as exc:
            raise DaemonStartError("store", exc)
        self._start_api(api_mod.create_app(central=self.central, token=self.cfg.token, ui_dir=self.cfg.ui_dir))

    def _start_robot(self):
        cfg = self.cfg
        try:
            bb = load_blackbox_config(Path(cfg.blackbox).read_text())
        except (OSError, ConfigError) as exc:
            raise DaemonStartError("config", exc)

        try:
            data_dir = Path(cfg.blackbox).parent / bb.storage.data_dir
            self.store = BlackBoxStore(
                data_dir, bb.storage.retention_max_bytes, robot_id=cfg.robot_id
            )
            self.offload_endpoint = bb.storage.offload_endpoint
        except OSError as exc:
            raise DaemonStartError("store", exc)

        try:
            self.sink = StoreSink(self.store).start()
            for source_spec in bb.sources:
                spec = source_spec
                if spec.kind == "jsonl-replay":
                    # replay paths resolve beside the recorder config
                    resolved = str((Path(cfg.blackbox).parent / spec.endpoint))
                    spec = type(spec)(name=spec.name, kind=spec.kind, endpoint=resolved, streams=spec.streams)
                runner = SourceRunner(spec, self.sink, clock=self.clock)
                runner.start(replay_fast=cfg.replay_fast, stop_event=self._ingest_stop)
                self.sources.append(runner)
        except TransportUnavailable as exc:
            raise DaemonStartError("ingest", exc)

        self.bus = StatusBus()
        try:
            specs = load_component_specs(cfg.components_dir)
            self.monitors = MonitorScheduler(
                specs,
                cfg.components_dir,
                self.store,
                self.bus,
                clock=self.clock,
                period_sec=cfg.monitor_period_sec,
                robot_id=cfg.robot_id,
            )
        except (OSError, ConfigError) as exc:
            raise DaemonStartError("monitors", exc)

        try:
            if cfg.rules is not None:
                ruleset = parse_rules(Path(cfg.rules).read_text())
                mappings = (
                    load_symptom_mappings(Path(cfg.symptom_mappings).read_text())
                    if cfg.symptom_mappings is not None
                    else []
                )
                self.diagnosis = DiagnosisService(ruleset, mappings, self.bus.subscribe())
        except Exception as exc:
            raise DaemonStartError("diagnosis", exc)

        try:
            executor = WorkflowExecutor(self.store, self.bus, clock=self.clock)
            if cfg.workflows_dir is not None:
                self.runs = RunRegistry.from_directory(
                    cfg.workflows_dir, executor, persist=self._persist_run
                )
                self.runs.load_persisted(self.store)
            else:
                self.runs = RunRegistry({}, executor, persist=self._persist_run)
        except Exception as exc:
            raise DaemonStartError("testflow", exc)

        # threads spin up in dependency order; queues already exist so
        # nothing published in between is lost
        self.monitors.start()
        if self.diagnosis is not None:
            self.diagnosis.start()

        robot = api_mod.RobotSystem(
            robot_id=cfg.robot_id,
            display_name=cfg.display_name,
            store=self.store,
            bus=self.bus,
            monitors=self.monitors,
            diagnosis=self.diagnosis,
            runs=self.runs,
            status_period_sec=cfg.monitor_period_sec,
            clock=self.clock,
        )
        self._start_api(api_mod.create_app(robot=robot, token=cfg.token, ui_dir=cfg.ui_dir))

    def _persist_run(self, run):
        self.store.append(run_record(run, ts=self.clock.now()))

    def _start_api(self, app):
        self.app = app
        try:
            self._server, self._server_thread = api_mod.serve_in_thread(
                app, self.cfg.listen_host, self.cfg.listen_port
            )
            deadline = time.time() + 5.0
            while not self._server.started:
                if time.time() > deadline or not self._server_thread.is_alive():
                    raise RuntimeError(f"server did not come up on {self.cfg.listen}")
                time.sleep(0.01)
        except Exception as exc:
            raise DaemonStartError("api", exc)

    @property
    def port(self) -> int:
        return self._server.servers[0].sockets[0].getsockname()[1]

    @property
    def base_url(self) -> str:
        return f"http://{self.cfg.listen_host}:{self.port}"

    # -- shutdown ------------------------------------------------------------

    def shutdown(self, timeout: float = 10.0) -> None:
        """Stop everything: drain ingest, seal the active segment, stop
        the API. Safe to call more than once."""
        if self._closed:
            return
        self._closed = True
        self._ingest_stop.set()
        for runner in self.sources:
            runner.join(timeout=2.0)
        if self.sink is not None:
            self.sink.close(timeout=timeout)
        if self.monitors is not None:
            self.monitors.stop()
        if self.diagnosis is not None:
            self.diagnosis.stop()
        if self.store is not None:
            self.store.seal_active()
            self.store.close()
        if self._server is not None:
            self._server.should_exit = True
            if self._server_thread is not None:
                self._server_thread.join(timeout)
                if self._server_thread.is_alive():
                    self._server.force_exit = True
                    self._server_thread.join(2.0)
        logger.info("daemon stopped")

    # -- offline operations ----------------------------------------------------

    def offload(self, endpoint: str | None = None):
        endpoint = endpoint or getattr(self, "offload_endpoint", None)
        if not endpoint:
            raise ConfigError("no offload endpoint configured")
        return self.store.offload(endpoint)


def open_store_for(cfg: DaemonConfig) -> BlackBoxStore:
    """Open the recorder's store offline (export / offload subcommands)."""
    bb = load_blackbox_config(Path(cfg.blackbox).read_text())
    data_dir = Path(cfg.blackbox).parent / bb.storage.data_dir
    store = BlackBoxStore(data_dir, bb.storage.retention_max_bytes, robot_id=cfg.robot_id)
    store.offload_endpoint = bb.storage.offload_endpoint
    return store
