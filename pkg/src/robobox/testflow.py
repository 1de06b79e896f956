"""Declarative remote-test workflows and their executor.

A workflow is a linear list of steps with timeouts: operator actions
(acknowledged remotely), expectations over component status or recorded
variables, and plain waits. Steps run strictly in order; the first step
that does not pass makes the remaining ones skip, so a run reads as a
reproducible trace with the deviation pinpointed. Completed runs are
persisted in the recorder under the ``testflow`` source and stay
queryable across restarts.
"""

from __future__ import annotations

import json
import logging
import threading
import uuid
from dataclasses import dataclass, field

from .clock import Clock, WallClock
from .config import ParseError, _load_yaml_mapping, _require_keys
from .model import FlatRecord

logger = logging.getLogger(__name__)

STEP_KINDS = ("operatorAction", "expectStatus", "expectVariable", "wait")
COMPARATORS = ("eq", "ne", "lt", "gt", "le", "ge")

_REQUIRED_PARAMS = {
    "operatorAction": ("instruction",),
    "expectStatus": ("component", "monitor", "output", "equals"),
    "expectVariable": ("variable", "comparator", "bound"),
    "wait": ("seconds",),
}


class WorkflowError(Exception):
    pass


class DuplicateStepId(WorkflowError):
    pass


class RunAlreadyActive(WorkflowError):
    pass


class UnknownWorkflow(WorkflowError):
    pass


class UnknownRun(WorkflowError):
    pass


@dataclass(frozen=True)
class Step:
    id: str
    kind: str
    params: dict
    timeout_sec: float

    def __post_init__(self):
        if self.kind not in STEP_KINDS:
            raise ParseError(f"step {self.id!r}: unknown kind {self.kind!r}")
        if not isinstance(self.timeout_sec, (int, float)) or self.timeout_sec <= 0:
            raise ParseError(f"step {self.id!r}: timeout_sec must be positive")
        missing = set(_REQUIRED_PARAMS[self.kind]) - set(self.params)
        if missing:
            raise ParseError(f"step {self.id!r}: missing params {sorted(missing)}")
        if self.kind == "expectVariable" and self.params["comparator"] not in COMPARATORS:
            raise ParseError(f"step {self.id!r}: unknown comparator {self.params['comparator']!r}")


@dataclass(frozen=True)
class WorkflowDef:
    id: str
    title: str
    steps: tuple

    def __post_init__(self):
        if not self.steps:
            raise ParseError(f"workflow {self.id!r}: at least one step required")
        ids = [s.id for s in self.steps]
        dupes = {i for i in ids if ids.count(i) > 1}
        if dupes:
            raise DuplicateStepId(f"workflow {self.id!r}: duplicate step ids {sorted(dupes)}")


def load_workflow(text: str) -> WorkflowDef:
    doc = _load_yaml_mapping(text, "workflow")
    _require_keys(doc, ("id", "title", "steps"), (), "workflow")
    if not isinstance(doc["steps"], list) or not doc["steps"]:
        raise ParseError(f"workflow {doc.get('id')!r}: steps must be a non-empty list")
    steps = []
    for sdoc in doc["steps"]:
        _require_keys(sdoc, ("id", "kind", "timeout_sec", "params"), (), "workflow step")
        steps.append(
            Step(
                id=sdoc["id"],
                kind=sdoc["kind"],
                params=dict(sdoc["params"] or {}),
                timeout_sec=float(sdoc["timeout_sec"]),
            )
        )
    return WorkflowDef(id=doc["id"], title=doc["title"], steps=tuple(steps))


@dataclass
class StepResult:
    step_id: str
    outcome: str  # passed | deviated | timedOut | skipped | aborted
    detail: str = ""
    started_at: float | None = None
    finished_at: float | None = None

    def to_doc(self) -> dict:
        return {
            "stepId": self.step_id,
            "outcome": self.outcome,
            "detail": self.detail,
            "startedAt": self.started_at,
            "finishedAt": self.finished_at,
        }


@dataclass
class WorkflowRun:
    run_id: str
    workflow_id: str
    started_at: float
    step_results: list = field(default_factory=list)
    overall: str = "running"  # running | passed | failed | aborted

    def to_doc(self) -> dict:
        return {
            "runId": self.run_id,
            "workflowId": self.workflow_id,
            "startedAt": self.started_at,
            "overall": self.overall,
            "stepResults": [r.to_doc() for r in self.step_results],
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "WorkflowRun":
        run = cls(run_id=doc["runId"], workflow_id=doc["workflowId"], started_at=doc["startedAt"])
        run.overall = doc.get("overall", "running")
        for rdoc in doc.get("stepResults", []):
            run.step_results.append(
                StepResult(
                    step_id=rdoc["stepId"],
                    outcome=rdoc["outcome"],
                    detail=rdoc.get("detail", ""),
                    started_at=rdoc.get("startedAt"),
                    finished_at=rdoc.get("finishedAt"),
                )
            )
        return run


def run_record(run: WorkflowRun, ts: float) -> FlatRecord:
    """Persisted form of a run: one record under the ``testflow`` source."""
    return FlatRecord(
        source="testflow",
        timestamp=ts,
        values={"testflow/run_id": run.run_id, "testflow/run": json.dumps(run.to_doc())},
    )


class AckChannel:
    """Operator acknowledgements for one run; acks may arrive early."""

    def __init__(self):
        self._lock = threading.Lock()
        self._acked: set = set()
        self._cancelled = False

    def ack(self, step_id: str) -> None:
        with self._lock:
            self._acked.add(step_id)

    def cancel(self) -> None:
        with self._lock:
            self._cancelled = True

    def is_acked(self, step_id: str) -> bool:
        with self._lock:
            return step_id in self._acked

    @property
    def cancelled(self) -> bool:
        with self._lock:
            return self._cancelled


def _compare(comparator: str, observed, bound) -> bool:
    try:
        if comparator == "eq":
            return observed == bound
        if comparator == "ne":
            return observed != bound
        if comparator == "lt":
            return observed < bound
        if comparator == "gt":
            return observed > bound
        if comparator == "le":
            return observed <= bound
        if comparator == "ge":
            return observed >= bound
    except TypeError:
        return False
    return False


class WorkflowExecutor:
    """Runs workflows against the live system: the status bus for
    expectations on component health, the store for recorded variables."""

    def __init__(self, store, bus, clock: Clock | None = None, poll_sec: float = 0.05):
        self.store = store
        self.bus = bus
        self.clock = clock or WallClock()
        self.poll_sec = poll_sec

    def execute(self, workflow: WorkflowDef, acks: AckChannel | None = None, run_id: str | None = None) -> WorkflowRun:
        acks = acks or AckChannel()
        run = WorkflowRun(
            run_id=run_id or uuid.uuid4().hex[:12],
            workflow_id=workflow.id,
            started_at=self.clock.now(),
        )
        failed = False
        for step in workflow.steps:
            result = StepResult(step_id=step.id, outcome="skipped", started_at=self.clock.now())
            run.step_results.append(result)
            if acks.cancelled:
                result.outcome = "aborted"
                result.detail = "operator cancelled the run"
                result.finished_at = self.clock.now()
                run.overall = "aborted"
                return run
            if failed:
                result.finished_at = result.started_at
                continue
            outcome, detail = self._run_step(step, acks)
            result.outcome = outcome
            result.detail = detail
            result.finished_at = self.clock.now()
            if acks.cancelled and outcome != "passed":
                result.outcome = "aborted"
                run.overall = "aborted"
                return run
            if outcome != "passed":
                failed = True
        run.overall = "passed" if not failed else "failed"
        return run

    def _run_step(self, step: Step, acks: AckChannel):
        deadline = self.clock.now() + step.timeout_sec
        if step.kind == "wait":
            self.clock.sleep(float(step.params["seconds"]))
            return "passed", ""
        if step.kind == "operatorAction":
            while self.clock.now() < deadline:
                if acks.cancelled:
                    return "timedOut", "cancelled while waiting for acknowledgement"
                if acks.is_acked(step.id):
                    return "passed", "acknowledged"
                self.clock.sleep(self.poll_sec)
            return "timedOut", f"no acknowledgement within {step.timeout_sec}s"
        if step.kind == "expectStatus":
            wanted = step.params["equals"]
            last = None
            while self.clock.now() < deadline:
                if acks.cancelled:
                    break
                status = self._latest_status(step.params["component"], step.params["monitor"])
                if status is not None:
                    last = status.health_status.get(step.params["output"])
                    if last == wanted:
                        return "passed", f"observed {step.params['output']}={last!r}"
                self.clock.sleep(self.poll_sec)
            return "deviated", f"expected {step.params['output']}={wanted!r}, last observed {last!r}"
        if step.kind == "expectVariable":
            comparator, bound = step.params["comparator"], step.params["bound"]
            last = None
            while self.clock.now() < deadline:
                if acks.cancelled:
                    break
                entry = self.store.latest(step.params["variable"])
                if entry is not None:
                    last = entry[0]
                    if _compare(comparator, last, bound):
                        return "passed", f"observed {step.params['variable']}={last!r}"
                self.clock.sleep(self.poll_sec)
            return (
                "deviated",
                f"expected {step.params['variable']} {comparator} {bound!r}, last observed {last!r}",
            )
        raise AssertionError(step.kind)

    def _latest_status(self, component: str, monitor: str):
        for status in self.bus.latest():
            if status.component == component and status.monitor_name == monitor:
                return status
        return None


class RunRegistry:
    """Workflow catalog plus run bookkeeping; one active run at a time."""

    def __init__(self, workflows: dict, executor: WorkflowExecutor, persist=None):
        self.workflows = dict(workflows)
        self.executor = executor
        self.persist = persist  # callable(WorkflowRun) or None
        self._lock = threading.Lock()
        self._runs: dict = {}
        self._acks: dict = {}
        self._active: str | None = None
        self._threads: dict = {}

    @classmethod
    def from_directory(cls, directory, executor: WorkflowExecutor, persist=None) -> "RunRegistry":
        from pathlib import Path

        workflows = {}
        for path in sorted(Path(directory).glob("*.yaml")):
            wf = load_workflow(path.read_text())
            workflows[wf.id] = wf
        return cls(workflows, executor, persist=persist)

    def load_persisted(self, store) -> int:
        """Recover completed runs appended to the recorder."""
        count = 0
        try:
            from .store import QuerySpec

            for ts, name, value in store.query(QuerySpec(("testflow/run",), 0.0, 2**62)):
                run = WorkflowRun.from_doc(json.loads(value))
                self._runs[run.run_id] = run
                count += 1
        except Exception:
            logger.exception("failed to recover persisted runs")
        return count

    def start_run(self, workflow_id: str) -> WorkflowRun:
        with self._lock:
            workflow = self.workflows.get(workflow_id)
            if workflow is None:
                raise UnknownWorkflow(f"no workflow {workflow_id!r}")
            if self._active is not None and self._runs[self._active].overall == "running":
                raise RunAlreadyActive(f"run {self._active} is still active")
            run_id = uuid.uuid4().hex[:12]
            run = WorkflowRun(run_id=run_id, workflow_id=workflow_id, started_at=self.executor.clock.now())
            acks = AckChannel()
            self._runs[run_id] = run
            self._acks[run_id] = acks
            self._active = run_id

        def _execute():
            finished = self.executor.execute(workflow, acks=acks, run_id=run_id)
            with self._lock:
                self._runs[run_id] = finished
                if self._active == run_id:
                    self._active = None
            if self.persist is not None:
                try:
                    self.persist(finished)
                except Exception:
                    logger.exception("persisting run %s failed", run_id)

        thread = threading.Thread(target=_execute, name=f"run-{run_id}", daemon=True)
        self._threads[run_id] = thread
        thread.start()
        return run

    def ack(self, run_id: str, step_id: str) -> None:
        with self._lock:
            if run_id not in self._acks:
                raise UnknownRun(f"no run {run_id!r}")
            self._acks[run_id].ack(step_id)

    def cancel(self, run_id: str) -> None:
        with self._lock:
            if run_id not in self._acks:
                raise UnknownRun(f"no run {run_id!r}")
            self._acks[run_id].cancel()

    def get(self, run_id: str) -> WorkflowRun:
        with self._lock:
            if run_id not in self._runs:
                raise UnknownRun(f"no run {run_id!r}")
            return self._runs[run_id]

    def wait(self, run_id: str, timeout: float = 30.0) -> WorkflowRun:
        thread = self._threads.get(run_id)
        if thread is not None:
            thread.join(timeout)
        return self.get(run_id)

    def list_workflows(self) -> list:
        return [
            {"id": wf.id, "title": wf.title, "steps": [
                {"id": s.id, "kind": s.kind, "timeoutSec": s.timeout_sec, "params": s.params}
                for s in wf.steps
            ]}
            for wf in self.workflows.values()
        ]
