import threading
import time

import pytest

from robobox.clock import VirtualClock, WallClock
from robobox.config import ParseError
from robobox.model import FlatRecord
from robobox.monitors import StatusBus, StatusMessage
from robobox.store import BlackBoxStore
from robobox.testflow import (
    AckChannel,
    DuplicateStepId,
    RunAlreadyActive,
    RunRegistry,
    UnknownWorkflow,
    WorkflowExecutor,
    load_workflow,
    run_record,
)

CART_WORKFLOW = """
id: cart_transport
title: Cart transport smoke test
steps:
  - id: cart_at_pickup
    kind: operatorAction
    timeout_sec: 5
    params:
      instruction: Place the cart at the pickup location
  - id: laser_alive
    kind: expectStatus
    timeout_sec: 2
    params:
      component: laser
      monitor: heartbeat
      output: scan_alive
      equals: true
  - id: battery_ok
    kind: expectVariable
    timeout_sec: 2
    params:
      variable: sim_battery/voltage
      comparator: gt
      bound: 22.0
"""


def test_load_cart_workflow():
    wf = load_workflow(CART_WORKFLOW)
    assert wf.id == "cart_transport"
    assert [s.kind for s in wf.steps] == ["operatorAction", "expectStatus", "expectVariable"]


def test_duplicate_step_id_rejected():
    with pytest.raises(DuplicateStepId):
        load_workflow(CART_WORKFLOW.replace("id: laser_alive", "id: cart_at_pickup"))


def test_empty_steps_rejected():
    with pytest.raises(ParseError):
        load_workflow("id: x\ntitle: X\nsteps: []\n")


def test_unknown_step_kind_rejected():
    with pytest.raises(ParseError):
        load_workflow(CART_WORKFLOW.replace("kind: wait", "kind: dance").replace("kind: expectStatus", "kind: dance"))


@pytest.fixture
def system(tmp_path):
    store = BlackBoxStore(tmp_path / "data", 4 * 1024 * 1024)
    bus = StatusBus()
    yield store, bus
    store.close()


def publish_laser(bus, alive, ts=1.0):
    bus.publish(
        StatusMessage(
            robot_id="r1",
            component="laser",
            monitor_name="heartbeat",
            timestamp=ts,
            health_status={"scan_alive": alive},
        )
    )


def executor_for(system, clock=None):
    store, bus = system
    return WorkflowExecutor(store, bus, clock=clock or WallClock(), poll_sec=0.01)


def test_all_expectations_met(system):
    store, bus = system
    publish_laser(bus, True)
    store.append(FlatRecord("sim_battery", 1.0, {"sim_battery/voltage": 24.0}))
    wf = load_workflow(CART_WORKFLOW)
    acks = AckChannel()
    acks.ack("cart_at_pickup")
    run = executor_for(system).execute(wf, acks=acks)
    assert [r.outcome for r in run.step_results] == ["passed", "passed", "passed"]
    assert run.overall == "passed"


def test_deviation_skips_rest(system):
    store, bus = system
    publish_laser(bus, False)  # silenced topic: alive=false
    store.append(FlatRecord("sim_battery", 1.0, {"sim_battery/voltage": 24.0}))
    wf = load_workflow(CART_WORKFLOW)
    acks = AckChannel()
    acks.ack("cart_at_pickup")
    run = executor_for(system, clock=VirtualClock(100.0)).execute(wf, acks=acks)
    assert [r.outcome for r in run.step_results] == ["passed", "deviated", "skipped"]
    assert run.overall == "failed"
    assert "scan_alive" in run.step_results[1].detail


def test_operator_never_acknowledges(system):
    wf = load_workflow(CART_WORKFLOW)
    run = executor_for(system, clock=VirtualClock(0.0)).execute(wf)
    assert run.step_results[0].outcome == "timedOut"
    assert run.overall == "failed"


def test_steps_run_in_order(system):
    store, bus = system
    publish_laser(bus, True)
    store.append(FlatRecord("sim_battery", 1.0, {"sim_battery/voltage": 24.0}))
    wf = load_workflow(CART_WORKFLOW)
    acks = AckChannel()
    acks.ack("cart_at_pickup")
    run = executor_for(system).execute(wf, acks=acks)
    for before, after in zip(run.step_results, run.step_results[1:]):
        assert after.started_at >= before.finished_at


def test_reproducible_outcome_sequences(system):
    store, bus = system
    publish_laser(bus, False)
    wf = load_workflow(CART_WORKFLOW)
    outcomes = []
    for _ in range(2):
        acks = AckChannel()
        acks.ack("cart_at_pickup")
        run = executor_for(system, clock=VirtualClock(50.0)).execute(wf, acks=acks)
        outcomes.append(tuple(r.outcome for r in run.step_results))
    assert outcomes[0] == outcomes[1]


def test_wait_step_passes(system):
    wf = load_workflow(
        "id: w\ntitle: W\nsteps:\n"
        "  - id: s1\n    kind: wait\n    timeout_sec: 5\n    params: {seconds: 0.01}\n"
    )
    run = executor_for(system).execute(wf)
    assert run.overall == "passed"


def test_cancel_aborts_run(system):
    wf = load_workflow(CART_WORKFLOW)
    executor = executor_for(system)
    acks = AckChannel()
    result = {}

    def _go():
        result["run"] = executor.execute(wf, acks=acks)

    thread = threading.Thread(target=_go)
    thread.start()
    time.sleep(0.05)
    acks.cancel()
    thread.join(5)
    assert result["run"].overall == "aborted"


def registry_for(system, persist=None):
    wf = load_workflow(CART_WORKFLOW)
    return RunRegistry({wf.id: wf}, executor_for(system), persist=persist)


def test_registry_single_active_run(system):
    store, bus = system
    registry = registry_for(system)
    run = registry.start_run("cart_transport")
    with pytest.raises(RunAlreadyActive):
        registry.start_run("cart_transport")
    registry.ack(run.run_id, "cart_at_pickup")
    publish_laser(bus, True)
    store.append(FlatRecord("sim_battery", 1.0, {"sim_battery/voltage": 24.0}))
    finished = registry.wait(run.run_id, timeout=20)
    assert finished.overall == "passed"
    registry.start_run("cart_transport")  # allowed again once finished


def test_registry_unknown_workflow(system):
    registry = registry_for(system)
    with pytest.raises(UnknownWorkflow):
        registry.start_run("ghost")


def test_run_persisted_and_recovered(system):
    store, bus = system
    persisted = []

    def persist(run):
        record = run_record(run, ts=time.time())
        store.append(record)
        persisted.append(run)

    registry = registry_for(system, persist=persist)
    publish_laser(bus, True)
    store.append(FlatRecord("sim_battery", 1.0, {"sim_battery/voltage": 24.0}))
    run = registry.start_run("cart_transport")
    registry.ack(run.run_id, "cart_at_pickup")
    registry.wait(run.run_id, timeout=20)
    assert persisted

    fresh = registry_for(system)
    assert fresh.load_persisted(store) == 1
    recovered = fresh.get(run.run_id)
    assert recovered.overall == "passed"
    assert [r.outcome for r in recovered.step_results] == ["passed", "passed", "passed"]
