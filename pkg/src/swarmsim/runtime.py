"""Local and remote agent execution.

Agents are mailbox-serialized: each one processes a single input batch at a
time, no matter how many threads call it concurrently. An agent server hosts
agents behind the RPC protocol in one of two modes:

* many_to_one - agents share one process and a worker pool; suited to
  workloads that mostly wait on I/O or remote generation APIs.
* one_to_one - every agent gets a dedicated OS child process, so
  compute-heavy agents do not contend for one interpreter lock.

Calling a remote agent never waits for the agent's work: the server enqueues
the task and the caller immediately gets a Placeholder, which resolve() turns
into the finished Message later. An agent that receives placeholders as input
resolves them itself before running its reply function.
"""

from __future__ import annotations

import logging
import multiprocessing
import os
import socket
import threading
import time
import uuid
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

from . import rpc
from .messages import Message, Payload, Placeholder, payload_from_jsonable, payload_to_jsonable
from .rpc import RpcError, RpcRequest, RpcResponse, RpcTimeout

log = logging.getLogger(__name__)

# Completed task results are kept this long for late resolvers, then dropped
# so the table cannot grow without bound.
TASK_TTL = 600.0
_PURGE_INTERVAL = 30.0


class UnknownAgentKind(KeyError):
    pass


class AgentNotFound(LookupError):
    pass


class TaskNotFound(LookupError):
    pass


class CapacityExceeded(RuntimeError):
    pass


class BindFailure(OSError):
    pass


# ---------------------------------------------------------------------------
# Agent definitions and the kind registry
# ---------------------------------------------------------------------------


@dataclass
class AgentDef:
    name: str
    kind: str
    params: dict = field(default_factory=dict)

    def to_jsonable(self) -> dict:
        return {"name": self.name, "kind": self.kind, "params": self.params}

    @classmethod
    def from_jsonable(cls, obj: dict) -> "AgentDef":
        return cls(name=obj["name"], kind=obj["kind"], params=obj.get("params", {}))


@dataclass(frozen=True)
class AgentRef:
    """Handle to an agent: local, or a proxy for one living on a server."""

    agent_id: str
    host: Optional[str] = None
    port: Optional[int] = None

    @property
    def is_proxy(self) -> bool:
        return self.host is not None


@dataclass
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = 0
    mode: str = "many_to_one"  # or "one_to_one"
    capacity: int = 1024
    workers: Optional[int] = None  # many_to_one pool size; defaults to cpu*4

    def __post_init__(self):
        if self.mode not in ("many_to_one", "one_to_one"):
            raise ValueError(f"unknown mode: {self.mode!r}")
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if self.workers is None:
            self.workers = (os.cpu_count() or 1) * 4
        if self.mode == "many_to_one" and self.workers < 1:
            raise ValueError("workers must be >= 1")


class Agent:
    """Base class for hosted agents; subclasses implement reply()."""

    def __init__(self, name: str, params: dict):
        self.name = name
        self.params = params

    def reply(self, inputs: list[Message]) -> Message:
        raise NotImplementedError

    def close(self):
        pass


_registry: dict[str, type] = {}


def register_agent_kind(kind: str, factory=None):
    """Register an agent class under a kind key; usable as a decorator."""

    def _register(cls):
        _registry[kind] = cls
        return cls

    if factory is not None:
        return _register(factory)
    return _register


def build_agent(agent_def: AgentDef) -> Agent:
    cls = _registry.get(agent_def.kind)
    if cls is None:
        raise UnknownAgentKind(agent_def.kind)
    return cls(agent_def.name, agent_def.params)


@register_agent_kind("echo")
class EchoAgent(Agent):
    """Replies with the concatenated content of its inputs."""

    def reply(self, inputs: list[Message]) -> Message:
        content = "".join(m.content for m in inputs)
        return Message(sender=self.name, role="assistant", content=content)


@register_agent_kind("sleeper")
class SleeperAgent(Agent):
    """Sleeps params['delay'] seconds, then echoes. Used by timing harnesses."""

    def reply(self, inputs: list[Message]) -> Message:
        time.sleep(float(self.params.get("delay", 1.0)))
        content = "".join(m.content for m in inputs)
        return Message(sender=self.name, role="assistant", content=content)


# ---------------------------------------------------------------------------
# Input normalization and placeholder resolution
# ---------------------------------------------------------------------------

PayloadLike = Union[Payload, Sequence[Payload]]


def _as_payload_list(input: PayloadLike) -> list[Payload]:
    if isinstance(input, (Message, Placeholder)):
        return [input]
    items = list(input)
    for item in items:
        if not isinstance(item, (Message, Placeholder)):
            raise TypeError(f"not a payload: {type(item).__name__}")
    return items


def resolve(p: Placeholder, timeout: float = rpc.CALL_TIMEOUT) -> Message:
    """Block until the task behind a placeholder completes; idempotent.

    A second resolve returns the cached message without touching the network.
    """
    if p.cached is not None:
        return p.cached
    req = RpcRequest(kind="resolve_task", payload={"task_id": p.task_id, "timeout": timeout})
    try:
        # Grace so the server-side wait, not the transport, decides timeouts.
        resp = rpc.rpc_call((p.host, p.port), req, timeout=timeout + 5.0)
        payload = resp.raise_for_error()
    except RpcError as exc:
        if exc.code == "TASK_NOT_FOUND":
            raise TaskNotFound(p.task_id) from exc
        if exc.code == "TIMEOUT":
            raise RpcTimeout(f"task {p.task_id} did not finish within {timeout}s") from exc
        raise
    message = payload_from_jsonable(payload["message"])
    assert isinstance(message, Message)
    if p.cached is None:
        p.cached = message
    return p.cached


def _materialize(inputs: Iterable[Payload], timeout: float = rpc.CALL_TIMEOUT) -> list[Message]:
    return [resolve(p, timeout) if isinstance(p, Placeholder) else p for p in inputs]


# ---------------------------------------------------------------------------
# Local runtime
# ---------------------------------------------------------------------------


class _Future:
    __slots__ = ("event", "value", "failure")

    def __init__(self):
        self.event = threading.Event()
        self.value = None
        self.failure = None

    def set(self, value):
        self.value = value
        self.event.set()

    def fail(self, exc):
        self.failure = exc
        self.event.set()

    def result(self, timeout=None):
        if not self.event.wait(timeout):
            raise RpcTimeout("agent did not reply in time")
        if self.failure is not None:
            raise self.failure
        return self.value


class _MailboxSlot:
    """One hosted agent plus its FIFO mailbox.

    Whichever thread enqueues work while the agent is idle becomes the
    drainer and processes the mailbox to empty; this serializes the agent
    without a dedicated thread per agent.
    """

    def __init__(self, agent_def: AgentDef, agent: Agent):
        self.agent_def = agent_def
        self.agent = agent
        self.created_at = time.time()
        self.lock = threading.Lock()
        self.queue: deque = deque()
        self.busy = False

    def submit(self, inputs: list[Payload]) -> _Future:
        fut = _Future()
        with self.lock:
            self.queue.append((inputs, fut))
        self.drain()
        return fut

    def drain(self):
        while True:
            with self.lock:
                if self.busy or not self.queue:
                    return
                self.busy = True
                inputs, fut = self.queue.popleft()
            try:
                fut.set(self.agent.reply(_materialize(inputs)))
            except BaseException as exc:  # delivered to the waiting caller
                fut.fail(exc)
            finally:
                with self.lock:
                    self.busy = False


class LocalRuntime:
    """Spawns agents in-process and talks to remote ones through proxies."""

    def __init__(self):
        self._lock = threading.Lock()
        self._slots: dict[str, _MailboxSlot] = {}

    def spawn(self, agent_def: AgentDef) -> AgentRef:
        agent = build_agent(agent_def)
        agent_id = f"{agent_def.name}-{uuid.uuid4().hex[:8]}"
        with self._lock:
            self._slots[agent_id] = _MailboxSlot(agent_def, agent)
        return AgentRef(agent_id=agent_id)

    def call(self, ref: AgentRef, input: PayloadLike, timeout: float = rpc.CALL_TIMEOUT) -> Payload:
        """Send input to an agent.

        For a local ref this computes and returns the reply Message. For a
        proxy it returns a Placeholder as soon as the server has enqueued the
        task, without waiting for the agent's work.
        """
        inputs = _as_payload_list(input)
        if ref.is_proxy:
            req = RpcRequest(
                kind="call_agent",
                payload={
                    "agent_id": ref.agent_id,
                    "inputs": [payload_to_jsonable(p) for p in inputs],
                },
            )
            try:
                payload = rpc.rpc_call((ref.host, ref.port), req, timeout=timeout).raise_for_error()
            except RpcError as exc:
                if exc.code == "AGENT_NOT_FOUND":
                    raise AgentNotFound(ref.agent_id) from exc
                raise
            # The server knows the task id; the address we reached it at is
            # the address other nodes should resolve against.
            return Placeholder(task_id=payload["task_id"], host=ref.host, port=payload["port"])
        slot = self._slot(ref)
        return slot.submit(inputs).result(timeout)

    def to_dist(self, ref: AgentRef, addr: tuple[str, int]) -> AgentRef:
        """Ship a local agent's definition to a server; return a proxy ref.

        Workflow code is unchanged afterwards: the proxy accepts the same
        call operation.
        """
        slot = self._slot(ref)
        host, port = addr
        req = RpcRequest(kind="create_agent", payload={"def": slot.agent_def.to_jsonable()})
        try:
            payload = rpc.rpc_call((host, port), req, timeout=rpc.CONTROL_TIMEOUT).raise_for_error()
        except RpcError as exc:
            if exc.code == "CAPACITY_EXCEEDED":
                raise CapacityExceeded(f"{host}:{port}") from exc
            raise
        self.stop(ref)
        return AgentRef(agent_id=payload["agent_id"], host=host, port=port)

    def stop(self, ref: AgentRef):
        if ref.is_proxy:
            req = RpcRequest(kind="stop_agent", payload={"agent_id": ref.agent_id})
            try:
                rpc.rpc_call((ref.host, ref.port), req, timeout=rpc.CONTROL_TIMEOUT).raise_for_error()
            except RpcError as exc:
                if exc.code == "AGENT_NOT_FOUND":
                    raise AgentNotFound(ref.agent_id) from exc
                raise
            return
        with self._lock:
            slot = self._slots.pop(ref.agent_id, None)
        if slot is None:
            raise AgentNotFound(ref.agent_id)
        slot.agent.close()

    def local_agent(self, ref: AgentRef) -> Agent:
        """The in-process agent object behind a local ref."""
        return self._slot(ref).agent

    def _slot(self, ref: AgentRef) -> _MailboxSlot:
        with self._lock:
            slot = self._slots.get(ref.agent_id)
        if slot is None:
            raise AgentNotFound(ref.agent_id)
        return slot


_default_runtime = LocalRuntime()


def spawn_local(agent_def: AgentDef) -> AgentRef:
    return _default_runtime.spawn(agent_def)


def call(ref: AgentRef, input: PayloadLike, timeout: float = rpc.CALL_TIMEOUT) -> Payload:
    return _default_runtime.call(ref, input, timeout)


def to_dist(ref: AgentRef, addr: tuple[str, int]) -> AgentRef:
    return _default_runtime.to_dist(ref, addr)


def stop(ref: AgentRef):
    return _default_runtime.stop(ref)


def local_agent(ref: AgentRef) -> Agent:
    return _default_runtime.local_agent(ref)


# ---------------------------------------------------------------------------
# Task table
# ---------------------------------------------------------------------------


class _Task:
    __slots__ = ("agent_id", "event", "message", "error", "done_at")

    def __init__(self, agent_id: str):
        self.agent_id = agent_id
        self.event = threading.Event()
        self.message: Optional[dict] = None  # jsonable Message
        self.error: Optional[tuple[str, str]] = None
        self.done_at: Optional[float] = None

    def complete(self, message_jsonable: dict):
        self.message = message_jsonable
        self.done_at = time.time()
        self.event.set()

    def fail(self, code: str, detail: str):
        self.error = (code, detail)
        self.done_at = time.time()
        self.event.set()


class _TaskTable:
    def __init__(self, ttl: float = TASK_TTL):
        self.ttl = ttl
        self._lock = threading.Lock()
        self._tasks: dict[str, _Task] = {}
        self._last_purge = time.time()

    def create(self, agent_id: str) -> tuple[str, _Task]:
        task_id = str(uuid.uuid4())
        task = _Task(agent_id)
        with self._lock:
            self._maybe_purge()
            self._tasks[task_id] = task
        return task_id, task

    def get(self, task_id: str) -> Optional[_Task]:
        with self._lock:
            return self._tasks.get(task_id)

    def fail_pending_for_agent(self, agent_id: str):
        with self._lock:
            pending = [
                t
                for t in self._tasks.values()
                if t.agent_id == agent_id and not t.event.is_set()
            ]
        for task in pending:
            task.fail("TASK_NOT_FOUND", "agent stopped before the task finished")

    def _maybe_purge(self):
        now = time.time()
        if now - self._last_purge < _PURGE_INTERVAL:
            return
        self._last_purge = now
        expired = [
            tid
            for tid, t in self._tasks.items()
            if t.done_at is not None and now - t.done_at > self.ttl
        ]
        for tid in expired:
            del self._tasks[tid]


# ---------------------------------------------------------------------------
# One-to-one mode: child process hosting
# ---------------------------------------------------------------------------


def _child_main(conn, def_jsonable: dict):
    # Fresh client pool: locks inherited through fork may be mid-operation.
    child_pool = rpc.ClientPool()

    def child_resolve(p: Placeholder) -> Message:
        if p.cached is not None:
            return p.cached
        req = RpcRequest(kind="resolve_task", payload={"task_id": p.task_id, "timeout": rpc.CALL_TIMEOUT})
        resp = child_pool.get(p.host, p.port).call(req, timeout=rpc.CALL_TIMEOUT + 5.0)
        message = payload_from_jsonable(resp.raise_for_error()["message"])
        assert isinstance(message, Message)
        return message

    agent = build_agent(AgentDef.from_jsonable(def_jsonable))
    while True:
        try:
            item = conn.recv()
        except EOFError:
            break
        if item is None:
            break
        task_id, inputs_jsonable = item
        try:
            inputs = [payload_from_jsonable(obj) for obj in inputs_jsonable]
            messages = [
                child_resolve(p) if isinstance(p, Placeholder) else p for p in inputs
            ]
            reply = agent.reply(messages)
            conn.send((task_id, "ok", payload_to_jsonable(reply)))
        except Exception as exc:
            conn.send((task_id, "err", f"{type(exc).__name__}: {exc}"))
    agent.close()
    child_pool.close_all()


class _ChildHandle:
    def __init__(self, agent_def: AgentDef, table: _TaskTable):
        self.agent_def = agent_def
        self.created_at = time.time()
        ctx = multiprocessing.get_context("fork")
        self.conn, child_conn = ctx.Pipe(duplex=True)
        self.send_lock = threading.Lock()
        self.process = ctx.Process(
            target=_child_main, args=(child_conn, agent_def.to_jsonable()), daemon=True
        )
        self.process.start()
        child_conn.close()
        self._reader = threading.Thread(target=self._pump, args=(table,), daemon=True)
        self._reader.start()

    def submit(self, task_id: str, inputs_jsonable: list[dict]):
        with self.send_lock:
            self.conn.send((task_id, inputs_jsonable))

    def _pump(self, table: _TaskTable):
        while True:
            try:
                task_id, status, body = self.conn.recv()
            except (EOFError, OSError):
                return
            task = table.get(task_id)
            if task is None:
                continue
            if status == "ok":
                task.complete(body)
            else:
                task.fail("INTERNAL", body)

    def stop(self):
        try:
            with self.send_lock:
                self.conn.send(None)
        except (BrokenPipeError, OSError):
            pass
        self.process.join(timeout=2.0)
        if self.process.is_alive():
            self.process.terminate()
            self.process.join(timeout=2.0)
        self.conn.close()


# ---------------------------------------------------------------------------
# Agent server
# ---------------------------------------------------------------------------


class AgentServer:
    """Serves the six RPC kinds for a fleet of hosted agents."""

    def __init__(self, config: ServerConfig):
        self.config = config
        self.tasks = _TaskTable()
        self.started_at = time.time()
        self._lock = threading.Lock()
        self._hosted: dict[str, object] = {}  # id -> _MailboxSlot | _ChildHandle
        self._listener: Optional[socket.socket] = None
        self._pool = None
        self._stopping = threading.Event()

    @property
    def port(self) -> int:
        assert self._listener is not None, "server not started"
        return self._listener.getsockname()[1]

    def start(self):
        try:
            listener = socket.create_server(
                (self.config.host, self.config.port), reuse_port=False
            )
        except OSError as exc:
            raise BindFailure(f"cannot bind {self.config.host}:{self.config.port}: {exc}") from exc
        listener.listen(256)
        self._listener = listener
        if self.config.mode == "many_to_one":
            from concurrent.futures import ThreadPoolExecutor

            self._pool = ThreadPoolExecutor(
                max_workers=self.config.workers, thread_name_prefix="agent-worker"
            )
        threading.Thread(target=self._accept_loop, daemon=True).start()
        log.info(
            "agent server listening on %s:%s (%s, capacity %s)",
            self.config.host,
            self.port,
            self.config.mode,
            self.config.capacity,
        )

    def serve_forever(self):
        self._stopping.wait()

    def shutdown(self):
        self._stopping.set()
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        with self._lock:
            hosted = list(self._hosted.values())
            self._hosted.clear()
        for entry in hosted:
            if isinstance(entry, _ChildHandle):
                entry.stop()
            else:
                entry.agent.close()
        if self._pool is not None:
            self._pool.shutdown(wait=False)

    # -- connection handling -------------------------------------------------

    def _accept_loop(self):
        while not self._stopping.is_set():
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            threading.Thread(target=self._serve_connection, args=(conn,), daemon=True).start()

    def _serve_connection(self, conn: socket.socket):
        rfile = conn.makefile("rb")
        write_lock = threading.Lock()

        def send(resp: RpcResponse):
            data = rpc.encode_frame(resp.to_bytes())
            with write_lock:
                try:
                    conn.sendall(data)
                except OSError:
                    pass

        try:
            while True:
                try:
                    body = rpc.decode_frame(rfile)
                except rpc.TruncatedFrame:
                    return
                try:
                    req = RpcRequest.from_bytes(body)
                except Exception as exc:
                    send(RpcResponse.failure("", "BAD_FRAME", str(exc)))
                    continue
                # Handle each request off-thread: resolve_task blocks, and
                # pipelined peers expect other requests to keep flowing.
                threading.Thread(
                    target=self._handle_request, args=(req, send), daemon=True
                ).start()
        finally:
            try:
                conn.close()
            except OSError:
                pass

    def _handle_request(self, req: RpcRequest, send):
        try:
            payload = self._dispatch(req)
            send(RpcResponse.success(req.request_id, payload))
        except RpcError as exc:
            send(RpcResponse.failure(req.request_id, exc.code, exc.message))
        except Exception as exc:
            log.exception("request %s failed", req.kind)
            send(RpcResponse.failure(req.request_id, "INTERNAL", f"{type(exc).__name__}: {exc}"))

    # -- request handlers ------------------------------------------------------

    def _dispatch(self, req: RpcRequest) -> dict:
        handler = {
            "create_agent": self._op_create,
            "call_agent": self._op_call,
            "resolve_task": self._op_resolve,
            "stop_agent": self._op_stop,
            "list_agents": self._op_list,
            "server_status": self._op_status,
        }[req.kind]
        return handler(req.payload)

    def _op_create(self, payload: dict) -> dict:
        agent_def = AgentDef.from_jsonable(payload["def"])
        with self._lock:
            if len(self._hosted) >= self.config.capacity:
                raise RpcError("CAPACITY_EXCEEDED", f"capacity {self.config.capacity} reached")
        if self.config.mode == "one_to_one":
            if agent_def.kind not in _registry:
                raise RpcError("INTERNAL", f"unknown agent kind: {agent_def.kind}")
            entry: object = _ChildHandle(agent_def, self.tasks)
        else:
            try:
                entry = _MailboxSlot(agent_def, build_agent(agent_def))
            except UnknownAgentKind as exc:
                raise RpcError("INTERNAL", f"unknown agent kind: {exc}") from exc
        agent_id = f"{agent_def.name}-{uuid.uuid4().hex[:8]}"
        with self._lock:
            if len(self._hosted) >= self.config.capacity:
                if isinstance(entry, _ChildHandle):
                    entry.stop()
                raise RpcError("CAPACITY_EXCEEDED", f"capacity {self.config.capacity} reached")
            self._hosted[agent_id] = entry
        return {"agent_id": agent_id}

    def _op_call(self, payload: dict) -> dict:
        agent_id = payload.get("agent_id", "")
        inputs_jsonable = payload.get("inputs", [])
        with self._lock:
            entry = self._hosted.get(agent_id)
        if entry is None:
            raise RpcError("AGENT_NOT_FOUND", agent_id)
        task_id, task = self.tasks.create(agent_id)
        if isinstance(entry, _ChildHandle):
            entry.submit(task_id, inputs_jsonable)
        else:
            self._submit_pooled(entry, task, inputs_jsonable)
        return {"task_id": task_id, "host": self.config.host, "port": self.port}

    def _submit_pooled(self, slot: _MailboxSlot, task: _Task, inputs_jsonable: list[dict]):
        def work():
            try:
                inputs = [payload_from_jsonable(obj) for obj in inputs_jsonable]
                fut = slot.submit(inputs)
                reply = fut.result()
                task.complete(payload_to_jsonable(reply))
            except Exception as exc:
                task.fail("INTERNAL", f"{type(exc).__name__}: {exc}")

        self._pool.submit(work)

    def _op_resolve(self, payload: dict) -> dict:
        task_id = payload.get("task_id", "")
        timeout = float(payload.get("timeout", rpc.CALL_TIMEOUT))
        task = self.tasks.get(task_id)
        if task is None:
            raise RpcError("TASK_NOT_FOUND", task_id)
        if not task.event.wait(timeout):
            raise RpcError("TIMEOUT", f"task {task_id} still running after {timeout}s")
        if task.error is not None:
            code, detail = task.error
            raise RpcError(code, detail)
        return {"message": task.message}

    def _op_stop(self, payload: dict) -> dict:
        agent_id = payload.get("agent_id", "")
        with self._lock:
            entry = self._hosted.pop(agent_id, None)
        if entry is None:
            raise RpcError("AGENT_NOT_FOUND", agent_id)
        if isinstance(entry, _ChildHandle):
            entry.stop()
            self.tasks.fail_pending_for_agent(agent_id)
        else:
            entry.agent.close()
        return {}

    def _op_list(self, payload: dict) -> dict:
        with self._lock:
            agents = [
                {
                    "agent_id": agent_id,
                    "kind": entry.agent_def.kind,
                    "name": entry.agent_def.name,
                    "created_at": entry.created_at,
                }
                for agent_id, entry in self._hosted.items()
            ]
        return {"agents": agents}

    def _op_status(self, payload: dict) -> dict:
        with self._lock:
            count = len(self._hosted)
        return {
            "mode": self.config.mode,
            "agent_count": count,
            "capacity": self.config.capacity,
            "workers": self.config.workers,
            "uptime_s": int(time.time() - self.started_at),
        }


def run_server(config: ServerConfig) -> AgentServer:
    """Start a server and block until shutdown() is called from elsewhere."""
    server = AgentServer(config)
    server.start()
    server.serve_forever()
    return server
