// DOM rendering: the whole page is re-rendered from the view state on every
// change. Handlers are injected so tests can observe actions without a hub.

import type { ServerRecord } from "./api.js";
import { renderChartSvg } from "./chart.js";
import { isPending, type SimFormValues, type ViewState } from "./state.js";

export interface Handlers {
  onSelectServer(serverId: string): void;
  onStopAgent(serverId: string, agentId: string): void;
  onLaunch(values: SimFormValues): void;
}

function el(tag: string, className?: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function fmtMem(bytes: number | undefined): string {
  if (!bytes) return "-";
  return `${(bytes / (1024 * 1024)).toFixed(0)} MiB`;
}

function fmtAge(lastHeartbeat: number): string {
  const age = Math.max(0, Date.now() / 1000 - lastHeartbeat);
  return `${age.toFixed(0)}s ago`;
}

export function renderBanner(state: ViewState): HTMLElement | null {
  if (!state.banner) return null;
  return el("div", "banner", `hub unreachable: ${state.banner} (showing last snapshot)`);
}

export function renderServerTable(state: ViewState, handlers: Handlers): HTMLElement {
  const section = el("section", "panel servers-panel");
  section.appendChild(el("h2", undefined, "Servers"));
  const table = el("table", "server-table") as HTMLTableElement;
  const head = el("tr");
  for (const title of ["Address", "Mode", "Status", "Agents", "CPU", "Memory", "Heartbeat"]) {
    head.appendChild(el("th", undefined, title));
  }
  table.appendChild(head);
  for (const server of state.servers) {
    const row = el("tr", server.server_id === state.selectedServer ? "selected" : "");
    row.dataset.serverId = server.server_id;
    row.appendChild(el("td", "addr", server.addr));
    row.appendChild(el("td", undefined, server.mode));
    const statusCell = el("td");
    statusCell.appendChild(el("span", `badge ${server.status}`, server.status));
    row.appendChild(statusCell);
    row.appendChild(el("td", undefined, `${server.agent_count}/${server.capacity}`));
    row.appendChild(el("td", undefined, `${(server.metrics.cpu_percent ?? 0).toFixed(1)}%`));
    row.appendChild(el("td", undefined, fmtMem(server.metrics.mem_bytes)));
    row.appendChild(el("td", undefined, fmtAge(server.last_heartbeat)));
    row.addEventListener("click", () => handlers.onSelectServer(server.server_id));
    table.appendChild(row);
  }
  if (state.servers.length === 0) {
    const empty = el("tr");
    empty.appendChild(el("td", "empty", "no servers registered"));
    table.appendChild(empty);
  }
  section.appendChild(table);
  return section;
}

export function renderAgentsPanel(state: ViewState, handlers: Handlers): HTMLElement {
  const section = el("section", "panel agents-panel");
  const server = state.servers.find((s: ServerRecord) => s.server_id === state.selectedServer);
  section.appendChild(el("h2", undefined, server ? `Agents on ${server.addr}` : "Agents"));
  if (!server) {
    section.appendChild(el("p", "hint", "select a server to inspect its agents"));
    return section;
  }
  const list = el("ul", "agent-list");
  for (const agent of state.agents) {
    const item = el("li", "agent-row");
    item.dataset.agentId = agent.agent_id;
    item.appendChild(el("span", "agent-id", agent.agent_id));
    item.appendChild(el("span", "agent-kind", agent.kind));
    const stop = el("button", "stop-btn", "stop") as HTMLButtonElement;
    const key = `stop:${agent.agent_id}`;
    stop.disabled = isPending(state, key);
    stop.addEventListener("click", (event) => {
      event.stopPropagation();
      handlers.onStopAgent(server.server_id, agent.agent_id);
    });
    item.appendChild(stop);
    list.appendChild(item);
  }
  if (state.agents.length === 0) {
    list.appendChild(el("li", "empty", "no agents"));
  }
  section.appendChild(list);
  return section;
}

const FORM_FIELDS: Array<{ name: keyof SimFormValues; label: string }> = [
  { name: "agents", label: "agents" },
  { name: "rounds", label: "rounds" },
  { name: "ratio", label: "ratio P/Q" },
  { name: "prompt", label: "prompt" },
  { name: "seed", label: "seed" },
];

export function defaultFormValues(): SimFormValues {
  return { agents: "100", rounds: "5", ratio: "2/3", prompt: "P2", seed: "0" };
}

export function renderSimPanel(
  state: ViewState,
  handlers: Handlers,
  formErrors: Partial<Record<keyof SimFormValues, string>> = {},
  formValues: SimFormValues = defaultFormValues(),
): HTMLElement {
  const section = el("section", "panel sim-panel");
  section.appendChild(el("h2", undefined, "Simulation"));
  const form = el("form", "sim-form") as HTMLFormElement;
  for (const field of FORM_FIELDS) {
    const wrap = el("label", "field");
    wrap.appendChild(el("span", undefined, field.label));
    const input = el("input") as HTMLInputElement;
    input.name = field.name;
    input.value = formValues[field.name];
    // Edits survive the 2 s re-render because the live values are the input.
    input.addEventListener("input", () => {
      formValues[field.name] = input.value;
    });
    wrap.appendChild(input);
    const error = formErrors[field.name];
    if (error) wrap.appendChild(el("span", "field-error", error));
    form.appendChild(wrap);
  }
  const launch = el("button", "launch-btn", "launch") as HTMLButtonElement;
  launch.type = "submit";
  launch.disabled = isPending(state, "launch");
  form.appendChild(launch);
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    handlers.onLaunch({ ...formValues });
  });
  section.appendChild(form);

  if (state.simId) {
    section.appendChild(
      el("p", "sim-status", `simulation ${state.simId.slice(0, 8)}: ${state.simStatus}`),
    );
  }
  const chart = el("div", "chart-holder");
  chart.innerHTML = renderChartSvg(state.rounds);
  section.appendChild(chart);
  return section;
}

export function renderApp(
  root: HTMLElement,
  state: ViewState,
  handlers: Handlers,
  formErrors: Partial<Record<keyof SimFormValues, string>> = {},
  formValues: SimFormValues = defaultFormValues(),
): void {
  root.textContent = "";
  const header = el("header");
  header.appendChild(el("h1", undefined, "swarmsim fleet"));
  header.appendChild(el("span", "poll-note", "polling every 2s"));
  root.appendChild(header);
  if (state.toast) root.appendChild(el("div", "toast", state.toast));
  const banner = renderBanner(state);
  if (banner) root.appendChild(banner);
  const main = el("main", "columns");
  main.appendChild(renderServerTable(state, handlers));
  main.appendChild(renderAgentsPanel(state, handlers));
  root.appendChild(main);
  root.appendChild(renderSimPanel(state, handlers, formErrors, formValues));
}
