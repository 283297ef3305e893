"""Shared-state environments with listeners and nesting.

An environment holds a key/value state map and named functions that agents
may invoke to query or modify it. Listeners attach to a function name and
fire after a mutation commits, pushing a notification Message to their
recipients when their condition holds. Environments nest: an agent attached
to a group environment can read its own group's state and every ancestor's,
but never a sibling group's.

Environments are hosted like any other agent (see the "environment" agent
kind at the bottom), so they can be moved to a server with to_dist and reused
over RPC.
"""

from __future__ import annotations

import copy
import json
import threading
import uuid
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Union

from . import runtime
from .messages import Message, Placeholder, canonical_json


class KeyNotFound(KeyError):
    pass


class DuplicateFunction(ValueError):
    pass


class UnknownFunction(KeyError):
    pass


class InvocationFailed(RuntimeError):
    pass


class CycleDetected(ValueError):
    pass


@dataclass(frozen=True)
class Recipient:
    name: str
    ref: runtime.AgentRef


@dataclass
class Listener:
    """Condition-triggered notification hook on one environment function.

    ``predicate`` is either a declarative dict (safe to ship across process
    boundaries) or, for in-process use only, a callable (args, old, new) ->
    bool. Declarative fields, all AND-ed together:

    * ``key``:     only fire when args["key"] equals this value
    * ``changed``: only fire when the new value differs from the old
    * ``equals``:  only fire when the new value equals this value
    * ``mentions_arg``: per-recipient; fire for a recipient only when its
      name occurs in the named argument's text
    """

    fn_name: str
    predicate: Union[dict, Callable[[dict, Any, Any], bool]]
    recipients: list[Recipient]
    listener_id: str = field(default_factory=lambda: str(uuid.uuid4()))

    def matches_event(self, args: dict, old: Any, new: Any) -> bool:
        if callable(self.predicate):
            return bool(self.predicate(args, old, new))
        p = self.predicate
        if "key" in p and args.get("key") != p["key"]:
            return False
        if p.get("changed") and new == old:
            return False
        if "equals" in p and new != p["equals"]:
            return False
        return True

    def matches_recipient(self, recipient: Recipient, args: dict) -> bool:
        if callable(self.predicate):
            return True
        arg_name = self.predicate.get("mentions_arg") if isinstance(self.predicate, dict) else None
        if arg_name is None:
            return True
        return recipient.name in str(args.get(arg_name, ""))


class Environment:
    def __init__(self, name: str, parent: Optional["Environment"] = None):
        self.env_id = str(uuid.uuid4())
        self.name = name
        self.parent = parent
        self.children: list[Union[runtime.AgentRef, "Environment"]] = []
        self._state: dict[str, Any] = {}
        self._functions: dict[str, Callable] = {}
        self._listeners: list[Listener] = []
        self._lock = threading.RLock()
        if parent is not None:
            parent.add_child(self)

    # -- state access --------------------------------------------------------

    def get(self, key: str) -> Any:
        """Read a key from this environment only. Reads never block."""
        try:
            return self._state[key]
        except KeyError:
            raise KeyNotFound(key) from None

    def lookup(self, key: str) -> Any:
        """Read a key from this environment or the nearest ancestor that has it."""
        env: Optional[Environment] = self
        while env is not None:
            if key in env._state:
                return env._state[key]
            env = env.parent
        raise KeyNotFound(key)

    def set(self, key: str, value: Any) -> Any:
        """Atomically set a key; returns the previous value (None if absent).

        Behaves like invoking the implicit function "set": listeners attached
        to it fire after the write commits.
        """
        with self._lock:
            previous = self._state.get(key)
            self._state[key] = value
        self._fire("set", {"key": key, "value": value}, previous, value)
        return previous

    # -- user-defined functions ------------------------------------------------

    def register_fn(self, name: str, fn: Callable):
        """Register fn(state, **args); it may read and mutate the state dict."""
        with self._lock:
            if name in self._functions or name == "set":
                raise DuplicateFunction(name)
            self._functions[name] = fn

    def invoke(self, fn_name: str, args: Optional[dict] = None) -> Any:
        """Run a registered function under the mutation lock.

        The function works on a shadow copy of the state; a raising function
        leaves the state untouched and surfaces as InvocationFailed.
        """
        args = args or {}
        with self._lock:
            fn = self._functions.get(fn_name)
            if fn is None:
                raise UnknownFunction(fn_name)
            old_state = self._state
            working = copy.deepcopy(self._state)
            try:
                result = fn(working, **args)
            except Exception as exc:
                raise InvocationFailed(f"{fn_name}: {type(exc).__name__}: {exc}") from exc
            self._state = working
        self._fire(fn_name, args, old_state, self._state, result)
        return result

    # -- listeners ---------------------------------------------------------------

    def add_listener(self, listener: Listener):
        with self._lock:
            known = listener.fn_name == "set" or listener.fn_name in self._functions
            if not known:
                raise UnknownFunction(listener.fn_name)
            self._listeners.append(listener)

    def _fire(self, fn_name: str, args: dict, old: Any, new: Any, result: Any = None):
        # Runs in the mutating thread after the lock is released, so delivery
        # never blocks other mutations; listeners fire in attachment order.
        with self._lock:
            listeners = [l for l in self._listeners if l.fn_name == fn_name]
        for listener in listeners:
            old_v, new_v = old, new
            if fn_name != "set" and isinstance(listener.predicate, dict):
                key = listener.predicate.get("key")
                if key is not None and isinstance(old, dict) and isinstance(new, dict):
                    old_v, new_v = old.get(key), new.get(key)
            if not listener.matches_event(args, old_v, new_v):
                continue
            for recipient in listener.recipients:
                if not listener.matches_recipient(recipient, args):
                    continue
                self._deliver(recipient.ref, self._notification(listener, fn_name, args, new_v))

    def _notification(self, listener: Listener, fn_name: str, args: dict, new_value: Any) -> Message:
        metadata: dict[str, Any] = {"fn_name": fn_name, "listener_id": listener.listener_id}
        for k, v in args.items():
            if isinstance(v, (str, int, float, bool)):
                metadata[f"arg_{k}"] = v
        return Message(
            sender=self.name,
            role="system",
            content=canonical_json({"args": args, "fn": fn_name}).decode("utf-8"),
            metadata=metadata,
        )

    @staticmethod
    def _deliver(ref: runtime.AgentRef, msg: Message):
        try:
            runtime.call(ref, msg)  # fire-and-forget: proxy placeholders are dropped
        except Exception:
            pass

    # -- nesting -------------------------------------------------------------------

    def add_child(self, child: Union[runtime.AgentRef, "Environment"]):
        if isinstance(child, Environment):
            env: Optional[Environment] = self
            while env is not None:
                if env is child:
                    raise CycleDetected(f"{child.name} would become its own ancestor")
                env = env.parent
            child.parent = self
        with self._lock:
            self.children.append(child)

    def agent_children(self) -> list[runtime.AgentRef]:
        with self._lock:
            return [c for c in self.children if isinstance(c, runtime.AgentRef)]

    def notify_agents(self, content: str, metadata: Optional[dict] = None) -> list:
        """Send one system Message from this environment to every attached agent.

        Returns the raw call results (Messages or Placeholders) so callers
        that need delivery-before-proceeding can resolve them.
        """
        results = []
        for ref in self.agent_children():
            msg = Message(
                sender=self.name, role="system", content=content, metadata=dict(metadata or {})
            )
            results.append(runtime.call(ref, msg))
        return results


# ---------------------------------------------------------------------------
# Environments as hosted agents
# ---------------------------------------------------------------------------

# Functions that remote environments may attach by name; code cannot be
# shipped over the wire, so both ends must know the key.
_env_functions: dict[str, Callable] = {}


def register_env_function(name: str, fn: Callable = None):
    def _register(f):
        _env_functions[name] = f
        return f

    if fn is not None:
        return _register(fn)
    return _register


@runtime.register_agent_kind("environment")
class EnvironmentAgent(runtime.Agent):
    """Hosts one Environment behind the agent-call interface.

    Commands arrive in message metadata ("command": get/set/lookup/invoke)
    with JSON arguments in the content; replies carry a JSON result or an
    "error" metadata field.
    """

    def __init__(self, name: str, params: dict):
        super().__init__(name, params)
        self.env = Environment(params.get("env_name", name))
        for fn_name in params.get("functions", []):
            fn = _env_functions.get(fn_name)
            if fn is None:
                raise UnknownFunction(fn_name)
            self.env.register_fn(fn_name, fn)

    def reply(self, inputs: list[Message]) -> Message:
        request = inputs[-1]
        command = request.metadata.get("command", "")
        args = json.loads(request.content) if request.content else {}
        try:
            if command == "get":
                result = self.env.get(args["key"])
            elif command == "lookup":
                result = self.env.lookup(args["key"])
            elif command == "set":
                result = self.env.set(args["key"], args["value"])
            elif command == "invoke":
                result = self.env.invoke(args["fn_name"], args.get("args", {}))
            else:
                raise UnknownFunction(command or "<missing command>")
        except Exception as exc:
            return Message(
                sender=self.name,
                role="assistant",
                content="",
                metadata={"error": f"{type(exc).__name__}: {exc}", "error_type": type(exc).__name__},
            )
        return Message(
            sender=self.name,
            role="assistant",
            content=json.dumps(result),
            metadata={"ok": True},
        )


class EnvironmentClient:
    """Call an environment hosted behind an AgentRef (local or proxy)."""

    def __init__(self, ref: runtime.AgentRef, caller: str = "client"):
        self.ref = ref
        self.caller = caller

    def get(self, key: str):
        return self._command("get", {"key": key})

    def lookup(self, key: str):
        return self._command("lookup", {"key": key})

    def set(self, key: str, value) -> Any:
        return self._command("set", {"key": key, "value": value})

    def invoke(self, fn_name: str, args: Optional[dict] = None):
        return self._command("invoke", {"fn_name": fn_name, "args": args or {}})

    _ERRORS = {
        "KeyNotFound": KeyNotFound,
        "UnknownFunction": UnknownFunction,
        "DuplicateFunction": DuplicateFunction,
        "InvocationFailed": InvocationFailed,
    }

    def _command(self, command: str, args: dict):
        msg = Message(
            sender=self.caller,
            role="user",
            content=json.dumps(args),
            metadata={"command": command},
        )
        out = runtime.call(self.ref, msg)
        if isinstance(out, Placeholder):
            out = runtime.resolve(out)
        if "error" in out.metadata:
            exc_type = self._ERRORS.get(out.metadata.get("error_type", ""), InvocationFailed)
            raise exc_type(out.metadata["error"])
        return json.loads(out.content) if out.content else None
