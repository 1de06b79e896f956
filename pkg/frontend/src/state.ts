// Pure view models: API payloads in, render-ready structures out.
// Nothing here touches the DOM or mutates its inputs.

import type {
  RunDoc,
  Scalar,
  Series,
  StatusMessage,
  WorkflowInfo,
} from "./types.js";

// -- status dashboard ---------------------------------------------------------

export interface HealthEntry {
  name: string;
  value: Scalar;
  health: "good" | "bad" | "info";
}

export interface ModeCard {
  monitor: string;
  timestamp: number;
  entries: HealthEntry[];
  healthy: boolean;
}

export interface ComponentCard {
  component: string;
  modes: ModeCard[];
  healthy: boolean;
}

export type Dashboard = Record<string, Record<string, ModeCard>>;

export function emptyDashboard(): Dashboard {
  return {};
}

function entryHealth(name: string, value: Scalar): HealthEntry {
  if (typeof value === "boolean") {
    return { name, value, health: value ? "good" : "bad" };
  }
  if (name === "evaluationError") {
    return { name, value, health: "bad" };
  }
  return { name, value, health: "info" };
}

export function modeCard(status: StatusMessage): ModeCard {
  const entries = Object.entries(status.healthStatus).map(([name, value]) =>
    entryHealth(name, value),
  );
  return {
    monitor: status.monitorName,
    timestamp: status.timestamp,
    entries,
    healthy: entries.every((e) => e.health !== "bad"),
  };
}

/** Fold one status message into the dashboard; returns a new dashboard. */
export function applyStatus(dashboard: Dashboard, status: StatusMessage): Dashboard {
  const next: Dashboard = { ...dashboard };
  next[status.component] = {
    ...(next[status.component] ?? {}),
    [status.monitorName]: modeCard(status),
  };
  return next;
}

export function applyStatuses(dashboard: Dashboard, statuses: StatusMessage[]): Dashboard {
  return statuses.reduce(applyStatus, dashboard);
}

export function dashboardCards(dashboard: Dashboard): ComponentCard[] {
  return Object.keys(dashboard)
    .sort()
    .map((component) => {
      const modes = Object.keys(dashboard[component])
        .sort()
        .map((monitor) => dashboard[component][monitor]);
      return { component, modes, healthy: modes.every((m) => m.healthy) };
    });
}

// -- data explorer ------------------------------------------------------------

export interface TimeWindow {
  from: number;
  to: number;
}

export function validWindow(window: TimeWindow): boolean {
  return Number.isFinite(window.from) && Number.isFinite(window.to) && window.from < window.to;
}

export function numericPoints(series: Series): [number, number][] {
  const out: [number, number][] = [];
  for (const [ts, value] of series.points) {
    if (typeof value === "number") out.push([ts, value]);
    else if (typeof value === "boolean") out.push([ts, value ? 1 : 0]);
  }
  return out;
}

// -- test runner ----------------------------------------------------------------

export type StepState =
  | "pending"
  | "running"
  | "passed"
  | "deviated"
  | "timedOut"
  | "skipped"
  | "aborted";

export interface ChecklistItem {
  stepId: string;
  kind: string;
  instruction: string;
  state: StepState;
  detail: string;
  needsAck: boolean;
}

/** Merge the workflow definition with a (possibly absent or partial)
 * run document into a renderable checklist. */
export function stepStates(workflow: WorkflowInfo, run: RunDoc | null): ChecklistItem[] {
  const results = new Map((run?.stepResults ?? []).map((r) => [r.stepId, r]));
  return workflow.steps.map((step) => {
    const result = results.get(step.id);
    const instruction =
      typeof step.params["instruction"] === "string" ? (step.params["instruction"] as string) : "";
    if (!result) {
      return { stepId: step.id, kind: step.kind, instruction, state: "pending", detail: "", needsAck: false };
    }
    const finished = result.finishedAt !== null;
    const state: StepState =
      !finished && run?.overall === "running" ? "running" : (result.outcome as StepState);
    return {
      stepId: step.id,
      kind: step.kind,
      instruction,
      state,
      detail: result.detail,
      needsAck: step.kind === "operatorAction" && state === "running",
    };
  });
}

export function verdict(run: RunDoc | null): string {
  if (!run) return "";
  return run.overall;
}
