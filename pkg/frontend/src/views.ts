// Thin DOM layer: render the pure view models into containers.

import { chartSvg, seriesColor } from "./chart.js";
import type { ChartSeries } from "./chart.js";
import type { ChecklistItem, ComponentCard } from "./state.js";
import type { DiagnosisResponse, RobotRegistration } from "./types.js";

function el(tag: string, className = "", text = ""): HTMLElement {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text) node.textContent = text;
  return node;
}

export function renderBanner(container: HTMLElement, message: string) {
  container.textContent = message;
  container.classList.toggle("hidden", message === "");
}

export function renderRobotPicker(
  select: HTMLSelectElement,
  robots: RobotRegistration[],
  selected: string | null,
) {
  select.innerHTML = "";
  for (const robot of robots) {
    const option = document.createElement("option");
    option.value = robot.robotId;
    option.textContent = `${robot.displayName} ${robot.online ? "(online)" : "(offline)"}`;
    option.selected = robot.robotId === selected;
    select.appendChild(option);
  }
}

export function renderDashboard(container: HTMLElement, cards: ComponentCard[], stale: boolean) {
  container.innerHTML = "";
  if (stale) container.appendChild(el("div", "stale-badge", "stale: no status updates"));
  if (cards.length === 0) {
    container.appendChild(el("p", "empty-state", "no component status yet"));
    return;
  }
  for (const card of cards) {
    const box = el("div", `card ${card.healthy ? "card-good" : "card-bad"}`);
    box.appendChild(el("h3", "", card.component));
    for (const mode of card.modes) {
      const modeBox = el("div", "mode");
      modeBox.appendChild(el("h4", "", mode.monitor));
      for (const entry of mode.entries) {
        const row = el("div", `entry entry-${entry.health}`);
        row.appendChild(el("span", "entry-name", entry.name));
        row.appendChild(el("span", "entry-value", String(entry.value)));
        modeBox.appendChild(row);
      }
      box.appendChild(modeBox);
    }
    container.appendChild(box);
  }
}

export function renderDiagnosis(container: HTMLElement, diagnosis: DiagnosisResponse) {
  container.innerHTML = "";
  if (diagnosis.hypotheses.length === 0) {
    container.appendChild(el("p", "empty-state", "no fault hypotheses"));
    return;
  }
  for (const hypothesis of diagnosis.hypotheses) {
    const box = el("div", "hypothesis");
    box.appendChild(el("strong", "", hypothesis.atom));
    box.appendChild(el("div", "support", `because: ${hypothesis.supportingFacts.join(", ")}`));
    container.appendChild(box);
  }
}

export function renderVariablePicker(
  container: HTMLElement,
  variables: string[],
  selected: Set<string>,
  onToggle: (variable: string) => void,
) {
  container.innerHTML = "";
  for (const variable of variables) {
    const label = el("label", "var-option");
    const checkbox = document.createElement("input");
    checkbox.type = "checkbox";
    checkbox.checked = selected.has(variable);
    checkbox.addEventListener("change", () => onToggle(variable));
    label.appendChild(checkbox);
    label.appendChild(el("span", "", variable));
    container.appendChild(label);
  }
}

export function renderChart(container: HTMLElement, series: ChartSeries[]) {
  container.innerHTML = chartSvg(series, { width: 720, height: 280, padding: 34 });
  const legend = el("div", "legend");
  series.forEach((s, index) => {
    const item = el("span", "legend-item", `${s.label} (${s.points.length} pts)`);
    item.style.color = seriesColor(index);
    legend.appendChild(item);
  });
  container.appendChild(legend);
}

export function renderChecklist(
  container: HTMLElement,
  items: ChecklistItem[],
  verdictText: string,
  onAck: (stepId: string) => void,
) {
  container.innerHTML = "";
  const list = el("ol", "checklist");
  for (const item of items) {
    const row = el("li", `step step-${item.state}`);
    row.appendChild(el("span", "step-id", item.stepId));
    row.appendChild(el("span", "step-state", item.state));
    if (item.instruction) row.appendChild(el("div", "step-instruction", item.instruction));
    if (item.detail) row.appendChild(el("div", "step-detail", item.detail));
    if (item.needsAck) {
      const button = el("button", "ack-button", "acknowledge") as HTMLButtonElement;
      button.addEventListener("click", () => onAck(item.stepId));
      row.appendChild(button);
    }
    list.appendChild(row);
  }
  container.appendChild(list);
  if (verdictText && verdictText !== "running") {
    container.appendChild(el("div", `verdict verdict-${verdictText}`, `verdict: ${verdictText}`));
  }
}
