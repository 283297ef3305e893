"""Lifecycle hub: server registry, heartbeats, remote agent control, and the
HTTP JSON API consumed by the dashboard and CLI.

Agent servers register once and then push heartbeats every few seconds; the
hub derives each server's status from heartbeat age and never polls. Hub
state is in-memory only: servers are the source of truth and simply
re-register after a hub restart.
"""

from __future__ import annotations

import json
import logging
import mimetypes
import os
import re
import threading
import time
import uuid
from collections import deque
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional
from urllib import error as urlerror
from urllib import request as urlrequest

from . import rpc
from .runtime import AgentDef

log = logging.getLogger(__name__)

HEARTBEAT_INTERVAL = 5.0
ALIVE_WINDOW = 10.0
STALE_WINDOW = 30.0
METRIC_HISTORY = 1000


class DuplicateAddress(ValueError):
    pass


class ServerDead(RuntimeError):
    pass


class UnknownServer(LookupError):
    pass


@dataclass
class ServerRecord:
    server_id: str
    host: str
    port: int
    mode: str
    capacity: int
    agent_count: int = 0
    metrics: dict = field(default_factory=dict)
    last_heartbeat: float = field(default_factory=time.time)
    registered_at: float = field(default_factory=time.time)

    @property
    def status(self) -> str:
        age = time.time() - self.last_heartbeat
        if age < ALIVE_WINDOW:
            return "alive"
        if age < STALE_WINDOW:
            return "stale"
        return "dead"

    def to_jsonable(self) -> dict:
        return {
            "server_id": self.server_id,
            "addr": f"{self.host}:{self.port}",
            "mode": self.mode,
            "capacity": self.capacity,
            "agent_count": self.agent_count,
            "status": self.status,
            "metrics": dict(self.metrics),
            "last_heartbeat": self.last_heartbeat,
        }


class Hub:
    """Registry and control plane over the fleet of agent servers."""

    def __init__(self):
        self._lock = threading.Lock()
        self._servers: dict[str, ServerRecord] = {}
        self._metric_history: dict[str, deque] = {}
        self._sims: dict[str, dict] = {}

    # -- registry -------------------------------------------------------------

    def register_server(self, host: str, port: int, mode: str, capacity: int) -> str:
        with self._lock:
            for record in self._servers.values():
                if (record.host, record.port) == (host, port):
                    if record.status != "dead":
                        raise DuplicateAddress(f"{host}:{port} is already registered")
                    # A dead record at the same address is superseded.
                    del self._servers[record.server_id]
                    self._metric_history.pop(record.server_id, None)
                    break
            server_id = str(uuid.uuid4())
            self._servers[server_id] = ServerRecord(
                server_id=server_id, host=host, port=port, mode=mode, capacity=capacity
            )
            self._metric_history[server_id] = deque(maxlen=METRIC_HISTORY)
            return server_id

    def heartbeat(self, server_id: str, agent_count: int, metrics: dict):
        with self._lock:
            record = self._servers.get(server_id)
            if record is None:
                raise UnknownServer(server_id)
            record.agent_count = agent_count
            record.metrics = dict(metrics)
            record.last_heartbeat = time.time()
            self._metric_history[server_id].append({"ts": record.last_heartbeat, **metrics})

    def servers(self) -> list[dict]:
        with self._lock:
            return [r.to_jsonable() for r in self._servers.values()]

    def _record(self, server_id: str) -> ServerRecord:
        with self._lock:
            record = self._servers.get(server_id)
        if record is None:
            raise UnknownServer(server_id)
        return record

    # -- remote agent control ----------------------------------------------------

    def list_agents(self, server_id: str) -> list[dict]:
        record = self._record(server_id)
        req = rpc.RpcRequest(kind="list_agents")
        resp = rpc.rpc_call((record.host, record.port), req, timeout=rpc.CONTROL_TIMEOUT)
        return resp.raise_for_error()["agents"]

    def create_remote_agent(self, server_id: str, agent_def: AgentDef) -> str:
        record = self._record(server_id)
        if record.status == "dead":
            raise ServerDead(server_id)
        req = rpc.RpcRequest(kind="create_agent", payload={"def": agent_def.to_jsonable()})
        resp = rpc.rpc_call((record.host, record.port), req, timeout=rpc.CONTROL_TIMEOUT)
        return resp.raise_for_error()["agent_id"]

    def stop_remote_agent(self, server_id: str, agent_id: str):
        record = self._record(server_id)
        req = rpc.RpcRequest(kind="stop_agent", payload={"agent_id": agent_id})
        resp = rpc.rpc_call((record.host, record.port), req, timeout=rpc.CONTROL_TIMEOUT)
        resp.raise_for_error()

    # -- simulations ----------------------------------------------------------------

    def start_simulation(self, config: dict) -> str:
        sim_id = str(uuid.uuid4())
        with self._lock:
            self._sims[sim_id] = {"config": config, "rounds": [], "status": "running"}
        thread = threading.Thread(target=self._run_simulation, args=(sim_id, config), daemon=True)
        thread.start()
        return sim_id

    def record_round(self, sim_id: str, round_obj: dict):
        with self._lock:
            sim = self._sims.get(sim_id)
            if sim is None:
                self._sims[sim_id] = sim = {"config": {}, "rounds": [], "status": "external"}
            sim["rounds"].append(round_obj)

    def simulation_rounds(self, sim_id: str) -> list[dict]:
        with self._lock:
            sim = self._sims.get(sim_id)
            if sim is None:
                raise UnknownServer(sim_id)
            return list(sim["rounds"])

    def simulation_status(self, sim_id: str) -> str:
        with self._lock:
            sim = self._sims.get(sim_id)
            if sim is None:
                raise UnknownServer(sim_id)
            return sim["status"]

    def _run_simulation(self, sim_id: str, config: dict):
        from fractions import Fraction

        from . import runtime
        from .backends import allocate_mix, parse_strategy_mix
        from .environment import Environment
        from .game import GameRule, build_prompt, make_player_def, run_game

        try:
            n = int(config.get("agents", 100))
            rounds = int(config.get("rounds", 5))
            num, den = config.get("ratio", [2, 3])
            rule = GameRule(ratio=Fraction(num, den), offset=float(config.get("offset", 0.0)))
            seed = int(config.get("seed", 0))
            mix = parse_strategy_mix(
                config.get(
                    "strategy_mix",
                    "level_k:1=0.15,level_k:2=0.15,level_k:3=0.15,level_k:4=0.15,"
                    "ratio_of_winner=0.2,below_winner=0.2",
                )
            )
            prompt = build_prompt(config.get("prompt", "P2"), rule)
            strategies = allocate_mix(mix, n, seed)
            refs = []
            for i, strategy in enumerate(strategies):
                backend_cfg = {"kind": "strategy", "strategy": strategy.to_jsonable(), "seed": seed}
                refs.append(
                    runtime.spawn_local(
                        make_player_def(f"sim-{sim_id[:8]}-{i}", prompt, rule, backend_cfg, seed=seed)
                    )
                )
            env = Environment(f"sim-{sim_id[:8]}")
            run_game(
                refs,
                rule,
                rounds,
                env,
                on_round=lambda r: self.record_round(
                    sim_id, {"round_index": r.round_index, "target": r.target, **r.stats.to_jsonable()}
                ),
            )
            for ref in refs:
                runtime.stop(ref)
            with self._lock:
                self._sims[sim_id]["status"] = "done"
        except Exception as exc:
            log.exception("simulation %s failed", sim_id)
            with self._lock:
                self._sims[sim_id]["status"] = f"failed: {exc}"


# ---------------------------------------------------------------------------
# HTTP layer
# ---------------------------------------------------------------------------

_ROUTES = [
    ("POST", re.compile(r"^/api/register$"), "register"),
    ("POST", re.compile(r"^/api/heartbeat$"), "heartbeat"),
    ("GET", re.compile(r"^/api/servers$"), "servers"),
    ("GET", re.compile(r"^/api/servers/(?P<sid>[^/]+)/agents$"), "list_agents"),
    ("POST", re.compile(r"^/api/servers/(?P<sid>[^/]+)/agents$"), "create_agent"),
    (
        "DELETE",
        re.compile(r"^/api/servers/(?P<sid>[^/]+)/agents/(?P<aid>[^/]+)$"),
        "stop_agent",
    ),
    ("POST", re.compile(r"^/api/simulations$"), "start_sim"),
    ("GET", re.compile(r"^/api/simulations/(?P<sim>[^/]+)/rounds$"), "sim_rounds"),
    ("POST", re.compile(r"^/api/simulations/(?P<sim>[^/]+)/rounds$"), "push_round"),
]


class HubServer:
    """HTTP front for a Hub, plus static /ui file serving."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0, ui_dir: Optional[str] = None):
        self.hub = Hub()
        self.ui_dir = Path(ui_dir).resolve() if ui_dir else None
        handler = _make_handler(self.hub, self.ui_dir)
        self._httpd = ThreadingHTTPServer((host, port), handler)
        self._httpd.daemon_threads = True
        self._thread: Optional[threading.Thread] = None

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    @property
    def url(self) -> str:
        host = self._httpd.server_address[0]
        return f"http://{host}:{self.port}"

    def start(self):
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        log.info("hub listening on %s", self.url)

    def serve_forever(self):
        self._httpd.serve_forever()

    def shutdown(self):
        self._httpd.shutdown()
        self._httpd.server_close()


def _make_handler(hub: Hub, ui_dir: Optional[Path]):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            log.debug("hub http: " + fmt, *args)

        def _reply(self, status: int, obj: dict):
            body = json.dumps(obj).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _ok(self, data):
            self._reply(200, {"ok": True, "data": data})

        def _fail(self, status: int, code: str, message: str):
            self._reply(status, {"ok": False, "error": {"code": code, "message": message}})

        def _body(self) -> dict:
            length = int(self.headers.get("Content-Length", 0))
            if not length:
                return {}
            return json.loads(self.rfile.read(length).decode("utf-8"))

        def _route(self, method: str):
            path = self.path.split("?", 1)[0]
            if method == "GET" and (path == "/ui" or path.startswith("/ui/")):
                return self._static(path)
            for m, pattern, name in _ROUTES:
                if m != method:
                    continue
                match = pattern.match(path)
                if match:
                    return self._invoke(name, match.groupdict())
            self._fail(404, "NOT_FOUND", f"no route for {method} {path}")

        def _invoke(self, name: str, args: dict):
            try:
                if name == "register":
                    body = self._body()
                    host, port = str(body["addr"]).rsplit(":", 1)
                    server_id = hub.register_server(
                        host, int(port), body.get("mode", "many_to_one"), int(body.get("capacity", 0))
                    )
                    self._ok({"server_id": server_id})
                elif name == "heartbeat":
                    body = self._body()
                    hub.heartbeat(
                        body["server_id"],
                        int(body.get("agent_count", 0)),
                        body.get("metrics", {}),
                    )
                    self._ok({})
                elif name == "servers":
                    self._ok(hub.servers())
                elif name == "list_agents":
                    self._ok(hub.list_agents(args["sid"]))
                elif name == "create_agent":
                    agent_def = AgentDef.from_jsonable(self._body())
                    self._ok({"agent_id": hub.create_remote_agent(args["sid"], agent_def)})
                elif name == "stop_agent":
                    hub.stop_remote_agent(args["sid"], args["aid"])
                    self._ok({})
                elif name == "start_sim":
                    self._ok({"sim_id": hub.start_simulation(self._body())})
                elif name == "sim_rounds":
                    self._ok(hub.simulation_rounds(args["sim"]))
                elif name == "push_round":
                    hub.record_round(args["sim"], self._body())
                    self._ok({})
            except DuplicateAddress as exc:
                self._fail(409, "DUPLICATE_ADDRESS", str(exc))
            except UnknownServer as exc:
                self._fail(404, "UNKNOWN_SERVER", str(exc))
            except ServerDead as exc:
                self._fail(409, "SERVER_DEAD", str(exc))
            except rpc.RpcError as exc:
                self._fail(502, exc.code, exc.message)
            except (rpc.RpcTimeout, ConnectionError, OSError) as exc:
                self._fail(502, "SERVER_UNREACHABLE", str(exc))
            except (KeyError, ValueError, json.JSONDecodeError) as exc:
                self._fail(400, "BAD_REQUEST", f"{type(exc).__name__}: {exc}")

        def _static(self, path: str):
            if ui_dir is None:
                return self._fail(404, "NO_UI", "hub started without a ui directory")
            rel = path[len("/ui"):].lstrip("/") or "index.html"
            target = (ui_dir / rel).resolve()
            if not str(target).startswith(str(ui_dir)) or not target.is_file():
                return self._fail(404, "NOT_FOUND", rel)
            body = target.read_bytes()
            ctype = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
            self.send_response(200)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            self._route("GET")

        def do_POST(self):
            self._route("POST")

        def do_DELETE(self):
            self._route("DELETE")

    return Handler


# ---------------------------------------------------------------------------
# Client helpers (used by the server CLI and tests)
# ---------------------------------------------------------------------------


def hub_request(base_url: str, method: str, path: str, body: Optional[dict] = None) -> dict:
    data = json.dumps(body).encode("utf-8") if body is not None else None
    req = urlrequest.Request(
        base_url.rstrip("/") + path,
        data=data,
        method=method,
        headers={"Content-Type": "application/json"},
    )
    try:
        with urlrequest.urlopen(req, timeout=10.0) as resp:
            return json.loads(resp.read().decode("utf-8"))
    except urlerror.HTTPError as exc:
        try:
            return json.loads(exc.read().decode("utf-8"))
        except Exception:
            return {"ok": False, "error": {"code": f"HTTP_{exc.code}", "message": str(exc)}}


def _process_metrics(started_at: float, last_cpu: list) -> dict:
    times = os.times()
    now = time.time()
    busy = times.user + times.system
    cpu_percent = 0.0
    if last_cpu:
        prev_busy, prev_now = last_cpu
        wall = max(now - prev_now, 1e-9)
        cpu_percent = max(0.0, (busy - prev_busy) / wall * 100.0)
    last_cpu[:] = [busy, now]
    mem_bytes = 0
    try:
        with open("/proc/self/status", "r", encoding="ascii") as f:
            for line in f:
                if line.startswith("VmRSS:"):
                    mem_bytes = int(line.split()[1]) * 1024
                    break
    except OSError:
        pass
    return {
        "cpu_percent": round(cpu_percent, 2),
        "mem_bytes": mem_bytes,
        "uptime_s": int(now - started_at),
    }


class HeartbeatReporter:
    """Registers an agent server with a hub and pushes heartbeats.

    If the hub forgets us (restart), the next heartbeat re-registers within
    one interval.
    """

    def __init__(self, hub_url: str, server, advertise_host: str, interval: float = HEARTBEAT_INTERVAL):
        self.hub_url = hub_url
        self.server = server
        self.advertise_host = advertise_host
        self.interval = interval
        self.server_id: Optional[str] = None
        self._started_at = time.time()
        self._last_cpu: list = []
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._loop, daemon=True)

    def start(self):
        self._register()
        self._thread.start()

    def stop(self):
        self._stop.set()

    def _register(self):
        result = hub_request(
            self.hub_url,
            "POST",
            "/api/register",
            {
                "addr": f"{self.advertise_host}:{self.server.port}",
                "mode": self.server.config.mode,
                "capacity": self.server.config.capacity,
            },
        )
        if result.get("ok"):
            self.server_id = result["data"]["server_id"]
            log.info("registered with hub as %s", self.server_id)
        else:
            log.warning("hub registration failed: %s", result.get("error"))

    def _heartbeat_once(self):
        if self.server_id is None:
            self._register()
            if self.server_id is None:
                return
        status = self.server._op_status({})
        result = hub_request(
            self.hub_url,
            "POST",
            "/api/heartbeat",
            {
                "server_id": self.server_id,
                "agent_count": status["agent_count"],
                "metrics": _process_metrics(self._started_at, self._last_cpu),
            },
        )
        if not result.get("ok") and result.get("error", {}).get("code") == "UNKNOWN_SERVER":
            self.server_id = None
            self._register()

    def _loop(self):
        while not self._stop.wait(self.interval):
            try:
                self._heartbeat_once()
            except Exception as exc:
                log.warning("heartbeat failed: %s", exc)
