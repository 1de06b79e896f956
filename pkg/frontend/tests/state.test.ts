import { describe, expect, it } from "vitest";

import {
  applyStatus,
  applyStatuses,
  dashboardCards,
  emptyDashboard,
  numericPoints,
  stepStates,
  validWindow,
} from "../src/state.js";
import type { RunDoc, StatusMessage, WorkflowInfo } from "../src/types.js";

function status(alive: boolean, component = "laser", monitor = "heartbeat"): StatusMessage {
  return {
    robotId: "r1",
    component,
    monitorName: monitor,
    timestamp: 12.5,
    healthStatus: { scan_alive: alive },
  };
}

describe("status dashboard model", () => {
  it("healthy booleans render green, faulty red", () => {
    const dashboard = applyStatus(emptyDashboard(), status(true));
    const [card] = dashboardCards(dashboard);
    expect(card.healthy).toBe(true);
    expect(card.modes[0].entries).toEqual([{ name: "scan_alive", value: true, health: "good" }]);

    const faulty = applyStatus(dashboard, status(false));
    const [red] = dashboardCards(faulty);
    expect(red.healthy).toBe(false);
    expect(red.modes[0].entries[0].health).toBe("bad");
  });

  it("an injected alive=false event updates the model without reload", () => {
    let dashboard = applyStatuses(emptyDashboard(), [status(true)]);
    expect(dashboardCards(dashboard)[0].healthy).toBe(true);
    const started = performance.now();
    dashboard = applyStatus(dashboard, status(false));
    const cards = dashboardCards(dashboard);
    const elapsed = performance.now() - started;
    expect(cards[0].healthy).toBe(false);
    expect(elapsed).toBeLessThan(1000);
  });

  it("numeric and string outputs are informational", () => {
    const message: StatusMessage = {
      robotId: "r1",
      component: "battery",
      monitorName: "threshold",
      timestamp: 1,
      healthStatus: { in_range: true, value: 24.5, note: "ok" },
    };
    const [card] = dashboardCards(applyStatus(emptyDashboard(), message));
    const healths = Object.fromEntries(card.modes[0].entries.map((e) => [e.name, e.health]));
    expect(healths).toEqual({ in_range: "good", value: "info", note: "info" });
  });

  it("evaluationError marks the mode unhealthy", () => {
    const message: StatusMessage = {
      robotId: "r1",
      component: "laser",
      monitorName: "device",
      timestamp: 1,
      healthStatus: { present: false, evaluationError: true },
    };
    const [card] = dashboardCards(applyStatus(emptyDashboard(), message));
    expect(card.healthy).toBe(false);
  });

  it("does not mutate its input", () => {
    const before = applyStatus(emptyDashboard(), status(true));
    const snapshot = JSON.stringify(before);
    applyStatus(before, status(false));
    expect(JSON.stringify(before)).toBe(snapshot);
  });

  it("cards sort by component name", () => {
    const dashboard = applyStatuses(emptyDashboard(), [
      status(true, "nav"),
      status(true, "battery"),
      status(true, "laser"),
    ]);
    expect(dashboardCards(dashboard).map((c) => c.component)).toEqual(["battery", "laser", "nav"]);
  });
});

describe("explorer model", () => {
  it("validates time windows", () => {
    expect(validWindow({ from: 0, to: 10 })).toBe(true);
    expect(validWindow({ from: 10, to: 10 })).toBe(false);
    expect(validWindow({ from: NaN, to: 10 })).toBe(false);
  });

  it("extracts numeric points and coerces booleans", () => {
    const points = numericPoints({
      variable: "v",
      points: [
        [1, 2.5],
        [2, true],
        [3, "text"],
        [4, false],
      ],
    });
    expect(points).toEqual([
      [1, 2.5],
      [2, 1],
      [4, 0],
    ]);
  });
});

const WORKFLOW: WorkflowInfo = {
  id: "smoke",
  title: "Smoke",
  steps: [
    { id: "s1", kind: "operatorAction", timeoutSec: 30, params: { instruction: "place cart" } },
    { id: "s2", kind: "expectStatus", timeoutSec: 5, params: {} },
    { id: "s3", kind: "expectVariable", timeoutSec: 5, params: {} },
  ],
};

describe("test runner model", () => {
  it("renders a deviated run with correct step states", () => {
    const run: RunDoc = {
      runId: "run1",
      workflowId: "smoke",
      startedAt: 0,
      overall: "failed",
      stepResults: [
        { stepId: "s1", outcome: "passed", detail: "acknowledged", startedAt: 0, finishedAt: 1 },
        { stepId: "s2", outcome: "deviated", detail: "expected alive=true", startedAt: 1, finishedAt: 6 },
        { stepId: "s3", outcome: "skipped", detail: "", startedAt: 6, finishedAt: 6 },
      ],
    };
    const items = stepStates(WORKFLOW, run);
    expect(items.map((i) => i.state)).toEqual(["passed", "deviated", "skipped"]);
    expect(items[1].detail).toContain("expected alive=true");
    expect(items.every((i) => !i.needsAck)).toBe(true);
  });

  it("marks the in-flight step running and operator steps ackable", () => {
    const run: RunDoc = {
      runId: "run1",
      workflowId: "smoke",
      startedAt: 0,
      overall: "running",
      stepResults: [
        { stepId: "s1", outcome: "skipped", detail: "", startedAt: 0, finishedAt: null },
      ],
    };
    const items = stepStates(WORKFLOW, run);
    expect(items.map((i) => i.state)).toEqual(["running", "pending", "pending"]);
    expect(items[0].needsAck).toBe(true);
    expect(items[0].instruction).toBe("place cart");
  });

  it("renders all pending before a run starts", () => {
    expect(stepStates(WORKFLOW, null).map((i) => i.state)).toEqual(["pending", "pending", "pending"]);
  });
});
