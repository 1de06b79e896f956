// Wire payloads of the daemon's /api routes.

export type Scalar = boolean | number | string;

export interface RobotRegistration {
  robotId: string;
  displayName: string;
  online: boolean;
  lastSeen: number | null;
}

export interface StatusMessage {
  robotId: string;
  component: string;
  monitorName: string;
  timestamp: number;
  healthStatus: Record<string, Scalar>;
}

export interface ComponentInfo {
  lifecycle: string;
  blockedBy: string[];
}

export interface StatusSnapshot {
  robotId: string;
  statuses: StatusMessage[];
  components: Record<string, ComponentInfo>;
}

export interface Series {
  variable: string;
  points: [number, Scalar][];
}

export interface SeriesResponse {
  series: Series[];
}

export interface Hypothesis {
  atom: string;
  supportingFacts: string[];
}

export interface DiagnosisResponse {
  hypotheses: Hypothesis[];
  symptomFacts: string[];
}

export interface WorkflowStepInfo {
  id: string;
  kind: string;
  timeoutSec: number;
  params: Record<string, unknown>;
}

export interface WorkflowInfo {
  id: string;
  title: string;
  steps: WorkflowStepInfo[];
}

export interface StepResultDoc {
  stepId: string;
  outcome: string;
  detail: string;
  startedAt: number | null;
  finishedAt: number | null;
}

export interface RunDoc {
  runId: string;
  workflowId: string;
  startedAt: number;
  overall: string;
  stepResults: StepResultDoc[];
}
