"""Component monitoring runtime.

Components pass an initialisation-level dependency check before their
runtime monitor modes are evaluated. Each mode is a function from its
configured inputs (plus the latest recorder state) to a map of declared
health outputs; every evaluation produces one status message, published
on the status bus and appended to the recorder under the ``status``
source so health history stays queryable.

Status message wire format (bit-exact JSON keys)::

    {"robotId": ..., "component": ..., "monitorName": ...,
     "timestamp": ..., "healthStatus": {...}}
"""

from __future__ import annotations

import json
import logging
import os
import queue
import threading
from dataclasses import dataclass, field

from .clock import Clock, WallClock
from .config import ComponentSpec, ModeSpec, load_mode_spec, resolve_mode_paths
from .model import FlatRecord

logger = logging.getLogger(__name__)

DEFAULT_PERIOD_SEC = 1.0

LIFECYCLES = ("unconfigured", "initialising", "operational", "degraded", "failed")
_ALLOWED_TRANSITIONS = {
    "unconfigured": ("initialising",),
    "initialising": ("operational", "failed"),
    "operational": ("degraded",),
    "degraded": ("operational", "failed"),
    "failed": ("initialising",),
}


class MonitorError(Exception):
    pass


class UnknownDependency(MonitorError):
    pass


class UnknownModeKind(MonitorError):
    pass


@dataclass(frozen=True)
class StatusMessage:
    robot_id: str
    component: str
    monitor_name: str
    timestamp: float
    health_status: dict

    def to_doc(self) -> dict:
        return {
            "robotId": self.robot_id,
            "component": self.component,
            "monitorName": self.monitor_name,
            "timestamp": self.timestamp,
            "healthStatus": self.health_status,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_doc(), allow_nan=False, separators=(",", ":"))

    @classmethod
    def from_doc(cls, doc: dict) -> "StatusMessage":
        return cls(
            robot_id=doc["robotId"],
            component=doc["component"],
            monitor_name=doc["monitorName"],
            timestamp=doc["timestamp"],
            health_status=doc["healthStatus"],
        )


@dataclass
class MonitorContext:
    """What a mode may look at: the store's latest state and the clock."""

    store: object
    clock: Clock
    robot_id: str = "robot"


class MonitorMode:
    """A mode spec bound to its evaluation function."""

    def __init__(self, spec: ModeSpec, evaluate):
        self.spec = spec
        self.evaluate = evaluate  # (ctx) -> {output name: value}

    @property
    def name(self) -> str:
        return self.spec.mode_name


def _device_exists(spec: ModeSpec):
    if len(spec.inputs) != len(spec.outputs):
        raise UnknownModeKind(f"mode {spec.mode_name!r}: one output per input path required")

    def evaluate(ctx):
        return {name: os.path.exists(path) for path, (name, _) in zip(spec.inputs, spec.outputs)}

    return evaluate


def _heartbeat(spec: ModeSpec):
    if len(spec.inputs) != len(spec.outputs):
        raise UnknownModeKind(f"mode {spec.mode_name!r}: one output per input topic required")
    timeout = float(spec.arguments.get("timeout_sec", 1.0))

    def evaluate(ctx):
        now = ctx.clock.now()
        result = {}
        for topic, (name, _) in zip(spec.inputs, spec.outputs):
            latest = ctx.store.latest_source_ts(topic)
            result[name] = latest is not None and (now - latest) <= timeout
        return result

    return evaluate


def _threshold(spec: ModeSpec):
    if len(spec.inputs) != 1:
        raise UnknownModeKind(f"mode {spec.mode_name!r}: exactly one input variable required")
    variable = spec.inputs[0]
    low = spec.arguments.get("min")
    high = spec.arguments.get("max")
    in_range_output = spec.outputs[0][0]
    value_output = spec.outputs[1][0] if len(spec.outputs) > 1 else None

    def evaluate(ctx):
        entry = ctx.store.latest(variable)
        result = {}
        if entry is None:
            result[in_range_output] = False
            if value_output:
                result[value_output] = -1
            return result
        value = entry[0]
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        if ok and low is not None:
            ok = value >= low
        if ok and high is not None:
            ok = value <= high
        result[in_range_output] = bool(ok)
        if value_output:
            result[value_output] = value if isinstance(value, (int, float)) else -1
        return result

    return evaluate


MODE_FACTORIES = {
    "device": _device_exists,
    "heartbeat": _heartbeat,
    "threshold": _threshold,
}


def build_mode(spec: ModeSpec) -> MonitorMode:
    """Bind a mode spec to its built-in evaluator.

    The evaluator kind is taken from the mode name: an exact registry
    match, or a ``<kind>_`` prefix / ``_<kind>`` suffix (so
    ``battery_threshold`` runs the threshold evaluator).
    """
    kind = None
    if spec.mode_name in MODE_FACTORIES:
        kind = spec.mode_name
    else:
        for candidate in MODE_FACTORIES:
            if spec.mode_name.startswith(candidate + "_") or spec.mode_name.endswith("_" + candidate):
                kind = candidate
                break
    if kind is None:
        raise UnknownModeKind(f"no evaluator for mode {spec.mode_name!r}")
    return MonitorMode(spec, MODE_FACTORIES[kind](spec))


def failure_outputs(spec: ModeSpec) -> dict:
    """Declared failure values: false for bools, -1 for numerics."""
    out = {}
    for name, otype in spec.outputs:
        if otype == "bool":
            out[name] = False
        elif otype in ("int", "float"):
            out[name] = -1
        else:
            out[name] = ""
    out["evaluationError"] = True
    return out


def run_mode_once(mode: MonitorMode, ctx: MonitorContext, component: str) -> StatusMessage:
    """Evaluate one mode; an evaluator crash reports failure values."""
    try:
        health = mode.evaluate(ctx)
        declared = set(mode.spec.output_names)
        if set(health) != declared:
            raise MonitorError(
                f"mode {mode.name!r} produced {sorted(health)}, declared {sorted(declared)}"
            )
    except Exception:
        logger.exception("mode %s of %s failed to evaluate", mode.name, component)
        health = failure_outputs(mode.spec)
    return StatusMessage(
        robot_id=ctx.robot_id,
        component=component,
        monitor_name=mode.name,
        timestamp=ctx.clock.now(),
        health_status=health,
    )


@dataclass
class ComponentState:
    component: str
    lifecycle: str = "unconfigured"
    last_statuses: dict = field(default_factory=dict)  # mode name -> health map
    blocked_by: tuple = ()
    error_count: int = 0

    def transition(self, target: str) -> bool:
        if target == self.lifecycle:
            return False
        if target in _ALLOWED_TRANSITIONS[self.lifecycle]:
            self.lifecycle = target
            return True
        return False


def check_dependencies(spec: ComponentSpec, states: dict):
    """Initialisation-level gate: every dependency must be operational
    or degraded. Returns the blocking components in declaration order."""
    blocked = []
    for dep in spec.dependencies:
        state = states.get(dep)
        if state is None:
            raise UnknownDependency(f"{spec.component_name!r} depends on unknown {dep!r}")
        if state.lifecycle not in ("operational", "degraded"):
            blocked.append(dep)
    return blocked


def _health_is_nominal(health: dict) -> bool:
    if health.get("evaluationError"):
        return False
    booleans = [v for v in health.values() if isinstance(v, bool)]
    return all(booleans) if booleans else True


class StatusBus:
    """Thread-safe fan-out of status messages plus a latest snapshot."""

    def __init__(self):
        self._lock = threading.Lock()
        self._subscribers: list = []
        self._latest: dict = {}
        self._last_seen: float | None = None

    def subscribe(self, maxsize: int = 1024) -> queue.Queue:
        q = queue.Queue(maxsize=maxsize)
        with self._lock:
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def publish(self, status: StatusMessage) -> None:
        with self._lock:
            self._latest[(status.component, status.monitor_name)] = status
            self._last_seen = status.timestamp
            subscribers = list(self._subscribers)
        for q in subscribers:
            try:
                q.put_nowait(status)
            except queue.Full:
                logger.warning("status subscriber queue full; dropping message")

    def latest(self) -> list:
        with self._lock:
            return [self._latest[key] for key in sorted(self._latest)]

    def last_seen(self):
        with self._lock:
            return self._last_seen


def status_record(status: StatusMessage) -> FlatRecord:
    """Persisted form of a status: one record under the ``status`` source."""
    values = {}
    for name, value in status.health_status.items():
        values[f"status/{status.component}/{status.monitor_name}/{name}"] = value
    return FlatRecord(source="status", timestamp=status.timestamp, values=values)


class MonitorScheduler:
    """Evaluates all components every period and tracks their lifecycles.

    One scheduler thread owns every ComponentState; at most one
    lifecycle transition happens per component per period.
    """

    def __init__(
        self,
        specs,
        components_dir,
        store,
        bus: StatusBus,
        clock: Clock | None = None,
        period_sec: float = DEFAULT_PERIOD_SEC,
        robot_id: str = "robot",
        persist: bool = True,
    ):
        self.specs = self._topo_sorted(list(specs))
        self.store = store
        self.bus = bus
        self.clock = clock or WallClock()
        self.period_sec = period_sec
        self.ctx = MonitorContext(store=store, clock=self.clock, robot_id=robot_id)
        self.persist = persist
        self.states = {s.component_name: ComponentState(s.component_name) for s in self.specs}
        self.modes = {}
        for spec in self.specs:
            bound = []
            for path in resolve_mode_paths(spec, components_dir):
                bound.append(build_mode(load_mode_spec(path.read_text())))
            self.modes[spec.component_name] = bound
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, name="monitor-loop", daemon=True)

    @staticmethod
    def _topo_sorted(specs):
        by_name = {s.component_name: s for s in specs}
        ordered, done = [], set()

        def visit(spec):
            if spec.component_name in done:
                return
            done.add(spec.component_name)
            for dep in spec.dependencies:
                if dep in by_name:
                    visit(by_name[dep])
            ordered.append(spec)

        for spec in specs:
            visit(spec)
        return ordered

    def tick(self) -> list:
        """One monitoring period; returns the published status messages."""
        published = []
        for spec in self.specs:
            state = self.states[spec.component_name]
            blocked = check_dependencies(spec, self.states)
            if blocked:
                state.blocked_by = tuple(blocked)
                if state.lifecycle == "unconfigured":
                    state.transition("initialising")
                elif state.lifecycle == "operational":
                    state.transition("degraded")
                else:
                    state.transition("failed")
                continue
            state.blocked_by = ()
            statuses = [run_mode_once(mode, self.ctx, spec.component_name) for mode in self.modes[spec.component_name]]
            nominal = [_health_is_nominal(s.health_status) for s in statuses]
            for status in statuses:
                state.last_statuses[status.monitor_name] = dict(status.health_status)
                if status.health_status.get("evaluationError"):
                    state.error_count += 1
                self.bus.publish(status)
                if self.persist and self.store is not None:
                    self.store.append(status_record(status))
                published.append(status)
            if all(nominal):
                target = "operational"
            elif any(nominal):
                target = "degraded"
            else:
                target = "failed"
            self._step_towards(state, target)
        return published

    @staticmethod
    def _step_towards(state: ComponentState, target: str):
        if state.lifecycle == target:
            return
        if state.lifecycle == "unconfigured":
            state.transition("initialising")
        elif state.lifecycle == "initialising":
            state.transition("operational" if target in ("operational", "degraded") else "failed")
        elif state.lifecycle == "operational":
            state.transition("degraded")
        elif state.lifecycle == "degraded":
            state.transition("operational" if target == "operational" else "failed")
        elif state.lifecycle == "failed":
            state.transition("initialising")

    def run_for(self, periods: int) -> list:
        """Drive a fixed number of periods on the scheduler's clock."""
        published = []
        for _ in range(periods):
            published.extend(self.tick())
            self.clock.sleep(self.period_sec)
        return published

    def start(self):
        self._thread.start()
        return self

    def stop(self, timeout: float = 5.0):
        self._stop.set()
        if self._thread.is_alive():
            self._thread.join(timeout)

    def _run(self):
        while not self._stop.is_set():
            started = self.clock.now()
            try:
                self.tick()
            except Exception:
                logger.exception("monitor tick failed")
            elapsed = self.clock.now() - started
            remaining = self.period_sec - elapsed
            if remaining > 0:
                self._stop.wait(remaining)

    def lifecycle(self, component: str) -> str:
        return self.states[component].lifecycle

    def snapshot(self) -> dict:
        """Lifecycle and blocking info per component."""
        return {
            name: {"lifecycle": state.lifecycle, "blockedBy": list(state.blocked_by)}
            for name, state in self.states.items()
        }
