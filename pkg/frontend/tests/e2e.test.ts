// @vitest-environment happy-dom
//
// End-to-end: a real hub and two real agent-server processes, driven through
// the actual dashboard code (polling loop, DOM events, chart rendering).

import { type ChildProcess, spawn } from "node:child_process";
import { request as httpRequest } from "node:http";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { HubApi } from "../src/api.js";
import { startApp } from "../src/main.js";

// Minimal fetch over node:http so network I/O does not depend on the DOM
// emulator; the client only needs .status and .json().
function rawFetch(url: string, init: RequestInit = {}): Promise<Response> {
  return new Promise((resolve, reject) => {
    const body = typeof init.body === "string" ? init.body : undefined;
    const headers: Record<string, string> = { ...((init.headers as Record<string, string>) ?? {}) };
    if (body !== undefined) {
      // Python's http.server does not speak chunked request bodies.
      headers["Content-Length"] = String(Buffer.byteLength(body));
    }
    // agent:false forces one fresh connection per request; reusing
    // keep-alive sockets races the hub closing idle connections.
    const req = httpRequest(
      url,
      { method: init.method ?? "GET", headers, agent: false },
      (res) => {
        const chunks: Buffer[] = [];
        res.on("data", (c: Buffer) => chunks.push(c));
        res.on("end", () => {
          const text = Buffer.concat(chunks).toString("utf-8");
          resolve({
            status: res.statusCode ?? 0,
            json: () => Promise.resolve(JSON.parse(text)),
          } as unknown as Response);
        });
      },
    );
    req.on("error", reject);
    if (body !== undefined) req.write(body);
    req.end();
  });
}

// Spawn a process that binds :0 and reports its real port on one of its
// streams; avoids probe-then-rebind port races entirely.
function spawnAndGrabPort(
  args: string[],
  pattern: RegExp,
  stream: "stdout" | "stderr",
): Promise<{ proc: ChildProcess; port: number }> {
  return new Promise((resolve, reject) => {
    const proc = spawn("python3", ["-u", ...args], { stdio: ["ignore", "pipe", "pipe"] });
    let buffer = "";
    const source = stream === "stdout" ? proc.stdout! : proc.stderr!;
    const timer = setTimeout(
      () => reject(new Error(`no port reported within 20s: ${buffer}`)),
      20000,
    );
    const onData = (chunk: Buffer) => {
      buffer += chunk.toString("utf-8");
      const match = pattern.exec(buffer);
      if (match) {
        clearTimeout(timer);
        source.off("data", onData);
        resolve({ proc, port: Number(match[1]) });
      }
    };
    source.on("data", onData);
    proc.on("exit", (code) => {
      clearTimeout(timer);
      reject(new Error(`process exited early with ${code}: ${buffer}`));
    });
  });
}

async function until(
  check: () => boolean,
  timeoutMs: number,
  label: string | (() => string),
): Promise<number> {
  const t0 = Date.now();
  while (Date.now() - t0 < timeoutMs) {
    if (check()) return Date.now() - t0;
    await new Promise((r) => setTimeout(r, 50));
  }
  const detail = typeof label === "function" ? label() : label;
  throw new Error(`timed out after ${timeoutMs}ms waiting for ${detail}`);
}

let hubProc: ChildProcess;
let serverProcs: ChildProcess[] = [];
let hubUrl = "";
let api: HubApi;
let root: HTMLElement;
let stopApp: (() => void) | null = null;

async function hubReady(): Promise<boolean> {
  try {
    const res = await rawFetch(`${hubUrl}/api/servers`);
    return res.status === 200;
  } catch {
    return false;
  }
}

beforeAll(async () => {
  const hub = await spawnAndGrabPort(
    ["-m", "swarmsim.cli", "agent-hub", "--listen", "127.0.0.1:0"],
    /hub listening on http:\/\/[\w.]+:(\d+)/,
    "stdout",
  );
  hubProc = hub.proc;
  hubUrl = `http://127.0.0.1:${hub.port}`;
  const t0 = Date.now();
  while (!(await hubReady())) {
    if (Date.now() - t0 > 20000) throw new Error("hub did not come up");
    await new Promise((r) => setTimeout(r, 100));
  }
  for (let i = 0; i < 2; i++) {
    const server = await spawnAndGrabPort(
      [
        "-m", "swarmsim.cli", "agent-server",
        "--listen", "127.0.0.1:0",
        "--capacity", "32",
        "--workers", "8",
        "--hub", hubUrl,
      ],
      /listening on [\w.]+:(\d+)/,
      "stderr",
    );
    serverProcs.push(server.proc);
  }
  // Both servers register with the hub at startup.
  const registered = async () => {
    const res = await rawFetch(`${hubUrl}/api/servers`);
    const body = (await res.json()) as { data: unknown[] };
    return body.data.length === 2;
  };
  const start = Date.now();
  while (!(await registered())) {
    if (Date.now() - start > 20000) throw new Error("agent servers did not register");
    await new Promise((r) => setTimeout(r, 100));
  }

  api = new HubApi(hubUrl, rawFetch);
  root = document.createElement("div");
  document.body.appendChild(root);
}, 60000);

afterAll(() => {
  if (stopApp) stopApp();
  for (const proc of [...serverProcs, hubProc]) {
    if (proc && proc.exitCode === null) proc.kill("SIGTERM");
  }
});

describe("dashboard against a live hub", () => {
  it("shows both servers with alive badges within 2 s", async () => {
    stopApp = startApp(root, api);
    const elapsed = await until(
      () => root.querySelectorAll("tr[data-server-id]").length === 2,
      2000,
      "two server rows",
    );
    expect(elapsed).toBeLessThanOrEqual(2000);
    expect(root.querySelectorAll(".badge.alive")).toHaveLength(2);
  }, 15000);

  it("stop-agent removes the row within one poll cycle", async () => {
    const servers = await api.servers();
    const target = servers[0]!;
    await api.createAgent(target.server_id, { name: "probe", kind: "echo" });

    const row = [...root.querySelectorAll("tr[data-server-id]")].find(
      (r) => (r as HTMLElement).dataset.serverId === target.server_id,
    ) as HTMLElement;
    row.click();
    await until(
      () => root.querySelectorAll(".agent-row").length === 1,
      5000,
      "the agent row to appear",
    );

    const stopButton = root.querySelector(".stop-btn") as HTMLButtonElement;
    stopButton.click();
    const elapsed = await until(
      () => root.querySelectorAll(".agent-row").length === 0,
      2000,
      "the agent row to disappear",
    );
    expect(elapsed).toBeLessThanOrEqual(2000);
    expect(await api.agents(target.server_id)).toHaveLength(0);
  }, 20000);

  it("launches a 100-agent 5-round simulation and charts 5 decreasing points", async () => {
    const seed = root.querySelector("input[name=seed]") as HTMLInputElement;
    seed.value = "42";
    seed.dispatchEvent(new Event("input", { bubbles: true }));
    // Defaults are 100 agents / 5 rounds / ratio 2/3.
    const form = root.querySelector("form.sim-form") as HTMLFormElement;
    form.dispatchEvent(new Event("submit", { cancelable: true }));

    const uiDiagnosis = () =>
      `toast=${root.querySelector(".toast")?.textContent ?? "-"} ` +
      `banner=${root.querySelector(".banner")?.textContent ?? "-"} ` +
      `status=${root.querySelector(".sim-status")?.textContent ?? "-"} ` +
      `errors=${[...root.querySelectorAll(".field-error")].map((e) => e.textContent).join(";")}`;
    await until(
      () => root.querySelectorAll('[data-role="avg-point"]').length === 5,
      30000,
      () => `five chart points (${uiDiagnosis()})`,
    );
    const values = [...root.querySelectorAll('[data-role="avg-point"]')].map((c) =>
      Number((c as HTMLElement).getAttribute("data-value")),
    );
    expect(values).toHaveLength(5);
    for (let i = 1; i < values.length; i++) {
      expect(values[i]!).toBeLessThan(values[i - 1]!);
    }
  }, 45000);
});
