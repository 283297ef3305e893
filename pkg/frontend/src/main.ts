// Wiring: a 2-second poll loop against the hub, action handlers, and full
// re-render on every state change. Served by the hub itself under /ui, so
// the API base is same-origin.

import { HubApi, HubError, PollGate } from "./api.js";
import { defaultFormValues, renderApp } from "./render.js";
import {
  beginAction,
  endAction,
  initialState,
  selectServer,
  type SimFormValues,
  validateSimForm,
  type ViewState,
  withAgents,
  withFetchError,
  withRounds,
  withServers,
  withSimulation,
  withToast,
} from "./state.js";

const POLL_MS = 2000;

export function startApp(root: HTMLElement, api: HubApi = new HubApi("")): () => void {
  let state: ViewState = initialState();
  let formErrors = {};
  const formValues = defaultFormValues();
  const gate = new PollGate();

  function update(next: ViewState): void {
    state = next;
    renderApp(root, state, handlers, formErrors, formValues);
  }

  async function pollServers(): Promise<void> {
    await gate.run("servers", async () => {
      try {
        update(withServers(state, await api.servers()));
      } catch (err) {
        update(withFetchError(state, err instanceof Error ? err.message : String(err)));
      }
    });
  }

  async function pollAgents(): Promise<void> {
    const serverId = state.selectedServer;
    if (!serverId) return;
    await gate.run("agents", async () => {
      try {
        update(withAgents(state, serverId, await api.agents(serverId)));
      } catch (err) {
        update(withFetchError(state, err instanceof Error ? err.message : String(err)));
      }
    });
  }

  async function pollRounds(): Promise<void> {
    const simId = state.simId;
    if (!simId) return;
    await gate.run("rounds", async () => {
      try {
        update(withRounds(state, await api.simulationRounds(simId)));
      } catch (err) {
        update(withFetchError(state, err instanceof Error ? err.message : String(err)));
      }
    });
  }

  const handlers = {
    onSelectServer(serverId: string): void {
      update(selectServer(state, serverId));
      void pollAgents();
    },

    onStopAgent(serverId: string, agentId: string): void {
      const key = `stop:${agentId}`;
      const started = beginAction(state, key);
      if (!started) return; // double-click guard
      update(started);
      api
        .stopAgent(serverId, agentId)
        .then(() => update(withToast(endAction(state, key), null)))
        .catch((err: unknown) => {
          const message = err instanceof HubError ? `${err.code}: ${err.message}` : String(err);
          update(withToast(endAction(state, key), `stop failed - ${message}`));
        })
        .finally(() => void pollAgents());
    },

    onLaunch(values: SimFormValues): void {
      const result = validateSimForm(values);
      if (!result.ok) {
        formErrors = result.errors;
        renderApp(root, state, handlers, formErrors, formValues);
        return;
      }
      formErrors = {};
      const started = beginAction(state, "launch");
      if (!started) return;
      update(started);
      api
        .startSimulation(result.config)
        .then((simId) => update(withSimulation(endAction(state, "launch"), simId)))
        .catch((err: unknown) => {
          const message = err instanceof HubError ? `${err.code}: ${err.message}` : String(err);
          update(withToast(endAction(state, "launch"), `launch failed - ${message}`));
        });
    },
  };

  update(state);
  void pollServers();
  const timer = setInterval(() => {
    void pollServers();
    void pollAgents();
    void pollRounds();
  }, POLL_MS);
  return () => clearInterval(timer);
}

declare global {
  interface Window {
    __swarmsimStop?: () => void;
  }
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  window.__swarmsimStop = startApp(document.getElementById("app") as HTMLElement);
}
