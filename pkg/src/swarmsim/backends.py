"""Pluggable text-generation backends behind one generate() interface.

Four families:

* StrategyBackend - deterministic rule-following players for desk-scale
  experiments; given the same inputs and seed they always produce the same
  text, no matter how many threads call them.
* ScriptedBackend - replays a fixed list of responses.
* DummyModel - sleeps one second and emits a random number, standing in for
  a slow generation service in timing runs.
* RemoteChatBackend - optional HTTP client for a chat-completions style
  endpoint; the only backend that talks to the network.
"""

from __future__ import annotations

import json
import random
import re
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, TYPE_CHECKING

from .messages import Message

if TYPE_CHECKING:
    from .game import GameRule


class BackendError(RuntimeError):
    pass


class AuthError(BackendError):
    pass


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 1.0
    seed: int = 0
    max_tokens: int = 512

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")


@dataclass(frozen=True)
class GenerationResult:
    text: str
    token_count: int  # whitespace approximation except for remote backends


STRATEGY_KINDS = (
    "uniform",
    "level_k",
    "fixed_zero",
    "below_winner",
    "ratio_of_winner",
    "fixed_point_iterate",
    "anchored_noise",
)


@dataclass(frozen=True)
class StrategyConfig:
    kind: str
    k: int = 1
    delta: float = 0.01
    anchor: float = 50.0
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy kind: {self.kind!r}")
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.kind == "below_winner" and self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")

    def to_jsonable(self) -> dict:
        return {
            "kind": self.kind,
            "k": self.k,
            "delta": self.delta,
            "anchor": self.anchor,
            "sigma": self.sigma,
        }

    @classmethod
    def from_jsonable(cls, obj: dict) -> "StrategyConfig":
        return cls(
            kind=obj["kind"],
            k=int(obj.get("k", 1)),
            delta=float(obj.get("delta", 0.01)),
            anchor=float(obj.get("anchor", 50.0)),
            sigma=float(obj.get("sigma", 0.0)),
        )


def strategy_decide(
    cfg: StrategyConfig, rule: "GameRule", last_winner: Optional[float], rng: random.Random
) -> float:
    """One strategic number in [rule.lower, rule.upper].

    Iterating strategies anchor on the previous round's announced winner when
    one exists; in the first round they fall back to one application of the
    rule map to the anchor (a level-1 guess).
    """
    ratio = float(rule.ratio)
    offset = rule.offset

    def step(x: float) -> float:
        return offset + ratio * x

    def level_value(k: int) -> float:
        x = last_winner if last_winner is not None else cfg.anchor
        for _ in range(k):
            x = step(x)
        return x

    kind = cfg.kind
    if kind == "uniform":
        value = rng.uniform(0.0, 100.0)
    elif kind == "level_k":
        value = level_value(cfg.k)
    elif kind == "fixed_zero":
        # The exact fixed point f* = offset / (1 - ratio), not an assumption
        # that it is zero; it is zero only when offset is.
        value = float(Fraction(offset) / (1 - rule.ratio))
    elif kind == "below_winner":
        if last_winner is None:
            value = level_value(1)
        else:
            value = max(rule.lower, last_winner - cfg.delta)
    elif kind in ("ratio_of_winner", "fixed_point_iterate"):
        value = step(last_winner) if last_winner is not None else level_value(1)
    elif kind == "anchored_noise":
        value = level_value(cfg.k) + rng.gauss(0.0, cfg.sigma)
    else:  # pragma: no cover - guarded by StrategyConfig validation
        raise ValueError(kind)
    return min(rule.upper, max(rule.lower, value))


# ---------------------------------------------------------------------------
# Text plumbing shared with the game pipeline
# ---------------------------------------------------------------------------

_NUMBER_RE = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")

EXTRACTION_PROMPT = (
    "The user message is a game player's full response. "
    "Extract the final number the player reports and output only that number, "
    "with no additional words."
)


def parse_last_number(text: str) -> Optional[float]:
    matches = _NUMBER_RE.findall(text)
    if not matches:
        return None
    try:
        return float(matches[-1])
    except ValueError:  # pragma: no cover
        return None


def _count_tokens(text: str) -> int:
    return len(text.split())


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------


class DummyModel:
    """Sleeps for a fixed delay and reports a random number in [0, 100]."""

    def __init__(self, delay: float = 1.0, seed: int = 0):
        self.delay = delay
        self._rng = random.Random(seed)
        self._lock = threading.Lock()

    def generate(self, system_prompt: str, history: list[Message], params: GenerationParams) -> GenerationResult:
        time.sleep(self.delay)
        with self._lock:
            value = self._rng.uniform(0.0, 100.0)
        text = repr(value)
        return GenerationResult(text=text, token_count=_count_tokens(text))


class ScriptedBackend:
    """Replays a fixed script of responses, one per generate call."""

    def __init__(self, entries: list[str]):
        self._entries = list(entries)
        self._index = 0
        self._lock = threading.Lock()

    def generate(self, system_prompt: str, history: list[Message], params: GenerationParams) -> GenerationResult:
        with self._lock:
            if self._index >= len(self._entries):
                raise BackendError("script exhausted")
            text = self._entries[self._index]
            self._index += 1
        return GenerationResult(text=text, token_count=_count_tokens(text))


_FIRST_NAMES = [
    "Thomas", "Emily", "Ravi", "Mei", "Carlos", "Anna", "Kofi", "Lena",
    "Ivan", "Sofia", "Noah", "Priya", "Omar", "Grace", "Hugo", "Yuki",
]
_LAST_NAMES = [
    "Reed", "Alvarez", "Novak", "Okafor", "Tanaka", "Haddad", "Kim",
    "Moreau", "Singh", "Berg", "Costa", "Ivanova", "Mbeki", "Larsen",
]
_JOBS = [
    "software engineer", "teacher", "nurse", "economist", "carpenter",
    "graphic designer", "research scientist", "chef", "accountant", "athlete",
]
_TRAITS = [
    "meticulous and driven", "curious and outgoing", "calm and analytical",
    "pragmatic and persistent", "creative and empathetic", "cautious and precise",
]


class StrategyBackend:
    """Deterministic player that answers game, extraction, and background
    requests.

    Game responses contain a short rationale and end with the reported
    number, so the two-call extraction path is exercised end to end. The
    per-call RNG is derived from (seed, agent id, round index), making the
    output independent of call interleaving.
    """

    def __init__(self, cfg: StrategyConfig, rule: "GameRule", agent_id: str, seed: int = 0):
        self.cfg = cfg
        self.rule = rule
        self.agent_id = agent_id
        self.seed = seed

    def generate(self, system_prompt: str, history: list[Message], params: GenerationParams) -> GenerationResult:
        if system_prompt == EXTRACTION_PROMPT:
            text = self._extract(history)
        elif "## Background" in system_prompt:
            text = self._background(system_prompt, params)
        else:
            text = self._play(history, params)
        return GenerationResult(text=text, token_count=_count_tokens(text))

    def _extract(self, history: list[Message]) -> str:
        if not history:
            return ""
        value = parse_last_number(history[-1].content)
        return "" if value is None else repr(value)

    def _play(self, history: list[Message], params: GenerationParams) -> str:
        announcements = [m for m in history if "winner" in m.metadata]
        round_index = len(announcements) + 1
        last_winner = float(announcements[-1].metadata["winner"]) if announcements else None
        rng = random.Random(f"{self.seed}:{self.agent_id}:{round_index}")
        cfg = self.cfg
        if cfg.kind == "anchored_noise" and cfg.sigma == 0.0:
            # The generation temperature realizes the noise scale, so a
            # temperature sweep widens the distribution without moving it.
            cfg = StrategyConfig(
                kind=cfg.kind, k=cfg.k, delta=cfg.delta, anchor=cfg.anchor,
                sigma=8.0 * params.temperature,
            )
        value = strategy_decide(cfg, self.rule, last_winner, rng)
        if last_winner is None:
            reason = f"Starting from {self.cfg.anchor:g} as the expected average."
        else:
            reason = f"The previous winner number was {last_winner:g}, so I adjust from there."
        return f"{reason} My reported number is {value!r}."

    def _background(self, system_prompt: str, params: GenerationParams) -> str:
        rng = random.Random(f"{params.seed}:background")
        name = f"{rng.choice(_FIRST_NAMES)} {rng.choice(_LAST_NAMES)}"
        age = rng.randint(18, 70)
        gender = rng.choice(["Male", "Female"])
        job = rng.choice(_JOBS)
        trait = rng.choice(_TRAITS)
        provided = self._provided_fields(system_prompt)
        lines = [f"Name: {name}", f"Age: {age}", f"Gender: {gender}", f"Job: {job}"]
        lines += [f"{k}: {v}" for k, v in provided.items()]
        paragraph = (
            f"{name} is a {trait} individual who works as a {job}. "
            f"At {age}, {name.split()[0]} approaches new situations with care "
            f"and enjoys reasoning through problems before acting."
        )
        return "## Background\n" + "\n".join(lines) + "\n\n" + paragraph

    @staticmethod
    def _provided_fields(system_prompt: str) -> dict:
        start = system_prompt.rfind("{")
        if start < 0:
            return {}
        try:
            obj = json.loads(system_prompt[start:])
        except json.JSONDecodeError:
            return {}
        return obj if isinstance(obj, dict) else {}


class RemoteChatBackend:
    """Client for a chat-completions style HTTP endpoint.

    Retries idempotently on 5xx with exponential backoff; 401/403 or a
    missing API key surface as AuthError.
    """

    RETRY_DELAYS = (0.5, 1.0, 2.0)

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: Optional[str] = None,
        timeout: float = 60.0,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout

    def generate(self, system_prompt: str, history: list[Message], params: GenerationParams) -> GenerationResult:
        import os

        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env)
            if not key:
                raise AuthError(f"environment variable {self.api_key_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        messages = [{"role": "system", "content": system_prompt}]
        messages += [{"role": m.role, "content": m.content} for m in history]
        body = json.dumps(
            {
                "model": self.model,
                "messages": messages,
                "temperature": params.temperature,
                "max_tokens": params.max_tokens,
                "seed": params.seed,
            }
        ).encode("utf-8")

        last_error: Optional[Exception] = None
        for attempt in range(len(self.RETRY_DELAYS) + 1):
            request = urllib.request.Request(
                f"{self.base_url}/chat/completions", data=body, headers=headers, method="POST"
            )
            try:
                with urllib.request.urlopen(request, timeout=self.timeout) as resp:
                    payload = json.loads(resp.read().decode("utf-8"))
                return self._parse(payload)
            except urllib.error.HTTPError as exc:
                if exc.code in (401, 403):
                    raise AuthError(f"HTTP {exc.code} from {self.base_url}") from exc
                if 500 <= exc.code < 600 and attempt < len(self.RETRY_DELAYS):
                    last_error = exc
                    time.sleep(self.RETRY_DELAYS[attempt])
                    continue
                raise BackendError(f"HTTP {exc.code} from {self.base_url}") from exc
            except urllib.error.URLError as exc:
                raise BackendError(f"request to {self.base_url} failed: {exc}") from exc
        raise BackendError(f"retries exhausted against {self.base_url}: {last_error}")

    @staticmethod
    def _parse(payload: dict) -> GenerationResult:
        try:
            text = payload["choices"][0]["message"]["content"]
            tokens = int(payload.get("usage", {}).get("total_tokens", 0))
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed completion response: {exc}") from exc
        return GenerationResult(text=text, token_count=tokens)


def parse_strategy_mix(spec: str) -> list[tuple[StrategyConfig, float]]:
    """Parse a mix spec like "level_k:2=0.3,ratio_of_winner=0.7".

    Entries are kind[:param]=weight; the optional param is k for level_k,
    delta for below_winner, and sigma for anchored_noise. Weights must sum
    to 1 within 1e-6.
    """
    entries: list[tuple[StrategyConfig, float]] = []
    for raw in spec.split(","):
        raw = raw.strip()
        if not raw:
            continue
        try:
            head, weight_str = raw.rsplit("=", 1)
            weight = float(weight_str)
        except ValueError as exc:
            raise ValueError(f"bad mix entry {raw!r}: expected kind[:param]=weight") from exc
        kind, _, param = head.partition(":")
        kwargs: dict = {}
        if param:
            if kind == "level_k":
                kwargs["k"] = int(param)
            elif kind == "below_winner":
                kwargs["delta"] = float(param)
            elif kind == "anchored_noise":
                kwargs["sigma"] = float(param)
            else:
                raise ValueError(f"strategy kind {kind!r} takes no parameter")
        if weight < 0:
            raise ValueError(f"negative weight in mix entry {raw!r}")
        entries.append((StrategyConfig(kind=kind, **kwargs), weight))
    if not entries:
        raise ValueError("empty strategy mix")
    total = sum(w for _, w in entries)
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"mix weights sum to {total}, expected 1")
    return entries


def allocate_mix(mix: list[tuple[StrategyConfig, float]], n: int, seed: int) -> list[StrategyConfig]:
    """Expand a weighted mix into n strategy configs, quota-exact and
    shuffled deterministically by the seed."""
    from .population import largest_remainder_counts

    counts = largest_remainder_counts([w for _, w in mix], n)
    configs = [cfg for (cfg, _), count in zip(mix, counts) for _ in range(count)]
    random.Random(seed).shuffle(configs)
    return configs


def backend_from_config(cfg: dict, agent_id: str = "", rule: "GameRule" = None):
    """Build a backend from a JSON-friendly config dict (used by agent defs)."""
    kind = cfg.get("kind", "")
    if kind == "dummy":
        return DummyModel(delay=float(cfg.get("delay", 1.0)), seed=int(cfg.get("seed", 0)))
    if kind == "scripted":
        return ScriptedBackend(list(cfg.get("entries", [])))
    if kind == "strategy":
        if rule is None:
            raise ValueError("strategy backend requires a game rule")
        return StrategyBackend(
            cfg=StrategyConfig.from_jsonable(cfg.get("strategy", {"kind": "level_k"})),
            rule=rule,
            agent_id=agent_id,
            seed=int(cfg.get("seed", 0)),
        )
    if kind == "remote":
        return RemoteChatBackend(
            base_url=cfg["base_url"],
            model=cfg.get("model", ""),
            api_key_env=cfg.get("api_key_env"),
            timeout=float(cfg.get("timeout", 60.0)),
        )
    raise ValueError(f"unknown backend kind: {kind!r}")
