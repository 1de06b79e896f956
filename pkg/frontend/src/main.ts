// Console bootstrap: one page, three views (explorer, dashboard, tests),
// talking only to the documented /api routes on the same origin.

import { ApiError, Client, StatusStream } from "./api.js";
import {
  applyStatus,
  applyStatuses,
  dashboardCards,
  emptyDashboard,
  numericPoints,
  stepStates,
  validWindow,
  verdict,
} from "./state.js";
import type { Dashboard, TimeWindow } from "./state.js";
import type { RunDoc, WorkflowInfo } from "./types.js";
import {
  renderBanner,
  renderChart,
  renderChecklist,
  renderDashboard,
  renderDiagnosis,
  renderRobotPicker,
  renderVariablePicker,
} from "./views.js";

const client = new Client("/api");

const $ = (id: string) => document.getElementById(id) as HTMLElement;

let robotId: string | null = null;
let variables: string[] = [];
const selectedVars = new Set<string>();
let dashboard: Dashboard = emptyDashboard();
let stream: StatusStream | null = null;
let stale = false;
let liveFollow = false;
let workflows: WorkflowInfo[] = [];
let activeRun: RunDoc | null = null;
let runPoller: ReturnType<typeof setInterval> | null = null;

function banner(message: string) {
  renderBanner($("banner"), message);
}

function currentWindow(): TimeWindow {
  const from = Number((document.getElementById("from") as HTMLInputElement).value);
  const to = Number((document.getElementById("to") as HTMLInputElement).value);
  return { from, to };
}

async function refreshRobots() {
  try {
    const robots = await client.robots();
    if (!robotId && robots.length > 0) robotId = robots[0].robotId;
    renderRobotPicker(document.getElementById("robot") as HTMLSelectElement, robots, robotId);
    banner("");
  } catch (error) {
    banner(`robot list unavailable: ${error}`);
  }
}

async function refreshVariables() {
  if (!robotId) return;
  try {
    variables = await client.variables(robotId);
    renderVariablePicker($("variables"), variables, selectedVars, (variable) => {
      if (selectedVars.has(variable)) selectedVars.delete(variable);
      else selectedVars.add(variable);
      void refreshChart();
    });
  } catch (error) {
    banner(`variables unavailable: ${error}`);
  }
}

async function refreshChart() {
  if (!robotId) return;
  const window = currentWindow();
  if (!validWindow(window)) {
    banner("select a window with from < to");
    return;
  }
  if (selectedVars.size === 0) {
    renderChart($("chart"), []);
    return;
  }
  try {
    const response = await client.data(robotId, [...selectedVars], window.from, window.to);
    renderChart(
      $("chart"),
      response.series.map((s) => ({ label: s.variable, points: numericPoints(s) })),
    );
    banner("");
  } catch (error) {
    banner(`data query failed: ${error}`);
  }
}

function downloadWindow() {
  if (!robotId) return;
  const window = currentWindow();
  if (!validWindow(window)) {
    banner("select a window with from < to");
    return;
  }
  // same window, same endpoint the contract tests pin
  const anchor = document.createElement("a");
  anchor.href = client.exportUrl(robotId, window.from, window.to);
  anchor.download = "";
  anchor.click();
}

function restartStream() {
  stream?.close();
  dashboard = emptyDashboard();
  if (!robotId) return;
  const id = robotId;
  void client.status(id).then((snapshot) => {
    dashboard = applyStatuses(dashboard, snapshot.statuses);
    redrawDashboard();
  });
  void refreshDiagnosis();
  stream = new StatusStream(client.streamUrl(id), {
    onStatus: (status) => {
      dashboard = applyStatus(dashboard, status);
      stale = false;
      redrawDashboard();
    },
    onState: (state) => {
      stale = state === "stale" || state === "reconnecting";
      redrawDashboard();
    },
  });
}

function redrawDashboard() {
  renderDashboard($("dashboard"), dashboardCards(dashboard), stale);
}

async function refreshDiagnosis() {
  if (!robotId) return;
  try {
    renderDiagnosis($("diagnosis"), await client.diagnosis(robotId));
  } catch (error) {
    banner(`diagnosis unavailable: ${error}`);
  }
}

async function refreshWorkflows() {
  if (!robotId) return;
  try {
    workflows = await client.workflows(robotId);
    const select = document.getElementById("workflow") as HTMLSelectElement;
    select.innerHTML = "";
    for (const workflow of workflows) {
      const option = document.createElement("option");
      option.value = workflow.id;
      option.textContent = workflow.title;
      select.appendChild(option);
    }
    redrawRun();
  } catch (error) {
    banner(`workflows unavailable: ${error}`);
  }
}

function selectedWorkflow(): WorkflowInfo | null {
  const select = document.getElementById("workflow") as HTMLSelectElement;
  return workflows.find((w) => w.id === select.value) ?? workflows[0] ?? null;
}

function redrawRun() {
  const workflow = activeRun
    ? workflows.find((w) => w.id === activeRun!.workflowId) ?? selectedWorkflow()
    : selectedWorkflow();
  if (!workflow) return;
  renderChecklist($("run"), stepStates(workflow, activeRun), verdict(activeRun), (stepId) => {
    if (activeRun) void client.ack(activeRun.runId, stepId);
  });
}

async function startRun() {
  const workflow = selectedWorkflow();
  const button = document.getElementById("start-run") as HTMLButtonElement;
  if (!robotId || !workflow) return;
  try {
    const { runId } = await client.startRun(robotId, workflow.id);
    banner("");
    button.disabled = false;
    if (runPoller !== null) clearInterval(runPoller);
    runPoller = setInterval(async () => {
      try {
        activeRun = await client.run(runId);
        redrawRun();
        if (activeRun.overall !== "running" && runPoller !== null) {
          clearInterval(runPoller);
          runPoller = null;
        }
      } catch {
        /* transient; next poll retries */
      }
    }, 300);
  } catch (error) {
    if (error instanceof ApiError && error.status === 409) {
      button.disabled = true;
      banner("a run is already active on this robot; wait for it to finish");
      setTimeout(() => (button.disabled = false), 3000);
    } else {
      banner(`could not start run: ${error}`);
    }
  }
}

function wire() {
  (document.getElementById("robot") as HTMLSelectElement).addEventListener("change", (event) => {
    robotId = (event.target as HTMLSelectElement).value;
    selectedVars.clear();
    void refreshVariables();
    void refreshChart();
    restartStream();
    void refreshWorkflows();
  });
  $("refresh-chart").addEventListener("click", () => void refreshChart());
  $("download").addEventListener("click", downloadWindow);
  $("start-run").addEventListener("click", () => void startRun());
  (document.getElementById("live-follow") as HTMLInputElement).addEventListener("change", (event) => {
    liveFollow = (event.target as HTMLInputElement).checked;
  });
  // live follow pins the window's end to now
  setInterval(() => {
    if (liveFollow) {
      (document.getElementById("to") as HTMLInputElement).value = (Date.now() / 1000).toFixed(0);
      void refreshChart();
    }
    void refreshDiagnosis();
  }, 2000);
  document.querySelectorAll<HTMLElement>("nav button").forEach((button) => {
    button.addEventListener("click", () => {
      document.querySelectorAll<HTMLElement>("main section").forEach((section) => {
        section.classList.toggle("hidden", section.id !== button.dataset.view);
      });
    });
  });
}

async function boot() {
  wire();
  const now = Date.now() / 1000;
  (document.getElementById("from") as HTMLInputElement).value = (now - 3600).toFixed(0);
  (document.getElementById("to") as HTMLInputElement).value = (now + 3600).toFixed(0);
  await refreshRobots();
  await refreshVariables();
  restartStream();
  await refreshWorkflows();
}

void boot();
