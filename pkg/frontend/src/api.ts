// Typed client for the hub HTTP API. Every response is an envelope
// {ok, data | error}; failures surface as HubError so callers can toast
// the machine-readable code.

export interface ServerRecord {
  server_id: string;
  addr: string;
  mode: string;
  capacity: number;
  agent_count: number;
  status: "alive" | "stale" | "dead";
  metrics: { cpu_percent?: number; mem_bytes?: number; uptime_s?: number };
  last_heartbeat: number;
}

export interface AgentRecord {
  agent_id: string;
  kind: string;
  name: string;
  created_at: number;
}

export interface RoundPoint {
  round_index: number;
  avg: number;
  target: number;
}

export interface SimConfig {
  agents: number;
  rounds: number;
  ratio: [number, number];
  prompt: string;
  seed: number;
}

interface Envelope<T> {
  ok: boolean;
  data?: T;
  error?: { code: string; message: string };
}

export class HubError extends Error {
  constructor(public code: string, message: string) {
    super(message);
    this.name = "HubError";
  }
}

export type FetchFn = (input: string, init?: RequestInit) => Promise<Response>;

export class HubApi {
  constructor(
    private baseUrl: string = "",
    private fetchFn: FetchFn = (input, init) => fetch(input, init),
  ) {}

  servers(): Promise<ServerRecord[]> {
    return this.request<ServerRecord[]>("GET", "/api/servers");
  }

  agents(serverId: string): Promise<AgentRecord[]> {
    return this.request<AgentRecord[]>("GET", `/api/servers/${serverId}/agents`);
  }

  createAgent(serverId: string, def: { name: string; kind: string; params?: object }): Promise<string> {
    return this.request<{ agent_id: string }>(
      "POST",
      `/api/servers/${serverId}/agents`,
      def,
    ).then((d) => d.agent_id);
  }

  stopAgent(serverId: string, agentId: string): Promise<void> {
    return this.request<object>("DELETE", `/api/servers/${serverId}/agents/${agentId}`).then(
      () => undefined,
    );
  }

  startSimulation(config: SimConfig): Promise<string> {
    return this.request<{ sim_id: string }>("POST", "/api/simulations", config).then(
      (d) => d.sim_id,
    );
  }

  simulationRounds(simId: string): Promise<RoundPoint[]> {
    return this.request<RoundPoint[]>("GET", `/api/simulations/${simId}/rounds`);
  }

  private async request<T>(method: string, path: string, body?: object): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + path, {
        method,
        headers: body !== undefined ? { "Content-Type": "application/json" } : undefined,
        body: body !== undefined ? JSON.stringify(body) : undefined,
      });
    } catch (err) {
      throw new HubError("UNREACHABLE", String(err));
    }
    let envelope: Envelope<T>;
    try {
      envelope = (await response.json()) as Envelope<T>;
    } catch {
      throw new HubError("BAD_RESPONSE", `HTTP ${response.status} with non-JSON body`);
    }
    if (!envelope.ok || envelope.data === undefined) {
      const error = envelope.error ?? { code: `HTTP_${response.status}`, message: "" };
      throw new HubError(error.code, error.message);
    }
    return envelope.data;
  }
}

// Skips a poll when the previous request for the same key is still in
// flight, so slow responses never stack up.
export class PollGate {
  private inFlight = new Set<string>();

  async run(key: string, task: () => Promise<void>): Promise<boolean> {
    if (this.inFlight.has(key)) return false;
    this.inFlight.add(key);
    try {
      await task();
      return true;
    } finally {
      this.inFlight.delete(key);
    }
  }
}
