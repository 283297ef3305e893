// The view model is a pure projection of the last successful API responses
// plus in-flight action flags. No domain quantity (target, average, status)
// is ever computed here; the hub owns all of those.

import type { AgentRecord, RoundPoint, ServerRecord, SimConfig } from "./api.js";

export interface ViewState {
  servers: ServerRecord[];
  selectedServer: string | null;
  agents: AgentRecord[];
  rounds: RoundPoint[];
  simId: string | null;
  simStatus: string;
  banner: string | null;
  pending: readonly string[];
  toast: string | null;
}

export function initialState(): ViewState {
  return {
    servers: [],
    selectedServer: null,
    agents: [],
    rounds: [],
    simId: null,
    simStatus: "",
    banner: null,
    pending: [],
    toast: null,
  };
}

export function withServers(state: ViewState, servers: ServerRecord[]): ViewState {
  const sorted = [...servers].sort((a, b) => a.addr.localeCompare(b.addr));
  const stillThere = sorted.some((s) => s.server_id === state.selectedServer);
  return {
    ...state,
    servers: sorted,
    selectedServer: stillThere ? state.selectedServer : null,
    agents: stillThere ? state.agents : [],
    banner: null,
  };
}

// A failed poll keeps the last snapshot and raises the banner.
export function withFetchError(state: ViewState, message: string): ViewState {
  return { ...state, banner: message };
}

export function selectServer(state: ViewState, serverId: string | null): ViewState {
  if (serverId === state.selectedServer) return state;
  return { ...state, selectedServer: serverId, agents: [] };
}

export function withAgents(state: ViewState, serverId: string, agents: AgentRecord[]): ViewState {
  if (serverId !== state.selectedServer) return state; // stale response
  return { ...state, agents: [...agents].sort((a, b) => a.agent_id.localeCompare(b.agent_id)) };
}

export function withSimulation(state: ViewState, simId: string): ViewState {
  return { ...state, simId, rounds: [], simStatus: "running" };
}

export function withRounds(state: ViewState, rounds: RoundPoint[]): ViewState {
  return { ...state, rounds };
}

export function withToast(state: ViewState, toast: string | null): ViewState {
  return { ...state, toast };
}

// Double-submission guard: an action key can be held only once.
export function beginAction(state: ViewState, key: string): ViewState | null {
  if (state.pending.includes(key)) return null;
  return { ...state, pending: [...state.pending, key] };
}

export function endAction(state: ViewState, key: string): ViewState {
  return { ...state, pending: state.pending.filter((k) => k !== key) };
}

export function isPending(state: ViewState, key: string): boolean {
  return state.pending.includes(key);
}

// -- simulation launch form ---------------------------------------------------

export interface SimFormValues {
  agents: string;
  rounds: string;
  ratio: string;
  prompt: string;
  seed: string;
}

export type SimFormResult =
  | { ok: true; config: SimConfig }
  | { ok: false; errors: Partial<Record<keyof SimFormValues, string>> };

const PROMPTS = ["P1", "P2", "P3", "P4", "P7"];

export function validateSimForm(values: SimFormValues): SimFormResult {
  const errors: Partial<Record<keyof SimFormValues, string>> = {};

  const agents = Number(values.agents);
  if (!Number.isInteger(agents) || agents < 1) {
    errors.agents = "agents must be a positive integer";
  }
  const rounds = Number(values.rounds);
  if (!Number.isInteger(rounds) || rounds < 1) {
    errors.rounds = "rounds must be a positive integer";
  }

  let ratio: [number, number] = [2, 3];
  const match = /^(\d+)\s*\/\s*(\d+)$/.exec(values.ratio.trim());
  if (!match) {
    errors.ratio = "ratio must look like P/Q, e.g. 2/3";
  } else {
    const p = Number(match[1]);
    const q = Number(match[2]);
    if (p <= 0 || q <= 0 || p >= q) {
      errors.ratio = "ratio must be a fraction strictly between 0 and 1";
    } else {
      ratio = [p, q];
    }
  }

  if (!PROMPTS.includes(values.prompt)) {
    errors.prompt = `prompt must be one of ${PROMPTS.join(", ")}`;
  }
  const seed = Number(values.seed || "0");
  if (!Number.isInteger(seed)) {
    errors.seed = "seed must be an integer";
  }

  if (Object.keys(errors).length > 0) return { ok: false, errors };
  return { ok: true, config: { agents, rounds, ratio, prompt: values.prompt, seed } };
}
