// Typed client for the daemon API. Every request the console makes goes
// through here, so the contract tests can pin the exact routes used.

import type {
  DiagnosisResponse,
  RobotRegistration,
  RunDoc,
  SeriesResponse,
  StatusMessage,
  StatusSnapshot,
  WorkflowInfo,
} from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

async function readError(response: Response): Promise<string> {
  try {
    const doc = await response.json();
    return typeof doc.error === "string" ? doc.error : response.statusText;
  } catch {
    return response.statusText;
  }
}

export class Client {
  constructor(
    private base: string = "/api",
    private fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const response = await this.fetchFn(this.base + path);
    if (!response.ok) throw new ApiError(response.status, await readError(response));
    return (await response.json()) as T;
  }

  private async postJson<T>(path: string): Promise<T> {
    const response = await this.fetchFn(this.base + path, { method: "POST" });
    if (!response.ok) throw new ApiError(response.status, await readError(response));
    return (await response.json()) as T;
  }

  robots(): Promise<RobotRegistration[]> {
    return this.getJson("/robots");
  }

  async variables(robotId: string): Promise<string[]> {
    const doc = await this.getJson<{ variables: string[] }>(
      `/robots/${encodeURIComponent(robotId)}/variables`,
    );
    return doc.variables;
  }

  data(robotId: string, vars: string[], from: number, to: number): Promise<SeriesResponse> {
    const params = new URLSearchParams();
    for (const v of vars) params.append("vars", v);
    params.set("from", String(from));
    params.set("to", String(to));
    return this.getJson(`/robots/${encodeURIComponent(robotId)}/data?${params}`);
  }

  exportUrl(robotId: string, from: number, to: number): string {
    return `${this.base}/robots/${encodeURIComponent(robotId)}/export?from=${from}&to=${to}`;
  }

  async exportWindow(robotId: string, from: number, to: number): Promise<string> {
    const response = await this.fetchFn(this.exportUrl(robotId, from, to));
    if (!response.ok) throw new ApiError(response.status, await readError(response));
    return await response.text();
  }

  status(robotId: string): Promise<StatusSnapshot> {
    return this.getJson(`/robots/${encodeURIComponent(robotId)}/status`);
  }

  streamUrl(robotId: string): string {
    return `${this.base}/robots/${encodeURIComponent(robotId)}/status/stream`;
  }

  diagnosis(robotId: string): Promise<DiagnosisResponse> {
    return this.getJson(`/robots/${encodeURIComponent(robotId)}/diagnosis`);
  }

  async workflows(robotId: string): Promise<WorkflowInfo[]> {
    const doc = await this.getJson<{ workflows: WorkflowInfo[] }>(
      `/robots/${encodeURIComponent(robotId)}/workflows`,
    );
    return doc.workflows;
  }

  startRun(robotId: string, workflowId: string): Promise<{ runId: string }> {
    return this.postJson(
      `/robots/${encodeURIComponent(robotId)}/tests/${encodeURIComponent(workflowId)}/run`,
    );
  }

  ack(runId: string, stepId: string): Promise<{ ok: boolean }> {
    return this.postJson(`/runs/${encodeURIComponent(runId)}/ack/${encodeURIComponent(stepId)}`);
  }

  cancel(runId: string): Promise<{ ok: boolean }> {
    return this.postJson(`/runs/${encodeURIComponent(runId)}/cancel`);
  }

  run(runId: string): Promise<RunDoc> {
    return this.getJson(`/runs/${encodeURIComponent(runId)}`);
  }
}

// -- status event stream -----------------------------------------------------

export type StreamState = "connecting" | "live" | "reconnecting" | "stale";

export interface EventSourceLike {
  onmessage: ((event: { data: string }) => void) | null;
  onerror: ((event: unknown) => void) | null;
  onopen: ((event: unknown) => void) | null;
  close(): void;
}

export interface StreamHandlers {
  onStatus: (status: StatusMessage) => void;
  onState?: (state: StreamState) => void;
}

export interface StreamOptions {
  makeSource?: (url: string) => EventSourceLike;
  staleAfterMs?: number;
  reconnectBaseMs?: number;
  setTimer?: typeof setTimeout;
  clearTimer?: typeof clearTimeout;
}

/** Subscribes to the status event stream with reconnect-on-error backoff
 * and a staleness signal when no event arrives for a while. */
export class StatusStream {
  private source: EventSourceLike | null = null;
  private staleTimer: ReturnType<typeof setTimeout> | null = null;
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;
  private backoffMs: number;
  private closed = false;

  private makeSource: (url: string) => EventSourceLike;
  private staleAfterMs: number;
  private reconnectBaseMs: number;
  private setTimer: typeof setTimeout;
  private clearTimer: typeof clearTimeout;

  constructor(
    private url: string,
    private handlers: StreamHandlers,
    options: StreamOptions = {},
  ) {
    this.makeSource =
      options.makeSource ??
      ((u: string) => new EventSource(u) as unknown as EventSourceLike);
    this.staleAfterMs = options.staleAfterMs ?? 5000;
    this.reconnectBaseMs = options.reconnectBaseMs ?? 1000;
    this.backoffMs = this.reconnectBaseMs;
    this.setTimer = options.setTimer ?? setTimeout;
    this.clearTimer = options.clearTimer ?? clearTimeout;
    this.connect();
  }

  private setState(state: StreamState) {
    this.handlers.onState?.(state);
  }

  private armStaleTimer() {
    if (this.staleTimer !== null) this.clearTimer(this.staleTimer);
    this.staleTimer = this.setTimer(() => this.setState("stale"), this.staleAfterMs);
  }

  private connect() {
    if (this.closed) return;
    this.setState("connecting");
    this.source = this.makeSource(this.url);
    this.source.onopen = () => {
      this.backoffMs = this.reconnectBaseMs;
      this.setState("live");
      this.armStaleTimer();
    };
    this.source.onmessage = (event) => {
      let parsed: StatusMessage;
      try {
        parsed = JSON.parse(event.data) as StatusMessage;
      } catch {
        return;
      }
      this.setState("live");
      this.armStaleTimer();
      this.handlers.onStatus(parsed);
    };
    this.source.onerror = () => {
      if (this.closed) return;
      this.source?.close();
      this.setState("reconnecting");
      this.reconnectTimer = this.setTimer(() => this.connect(), this.backoffMs);
      this.backoffMs = Math.min(this.backoffMs * 2, 15000);
    };
  }

  close() {
    this.closed = true;
    if (this.staleTimer !== null) this.clearTimer(this.staleTimer);
    if (this.reconnectTimer !== null) this.clearTimer(this.reconnectTimer);
    this.source?.close();
  }
}
