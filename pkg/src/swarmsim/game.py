"""The guess-the-fraction-of-the-average game.

Every player reports a real number in [lower, upper]; the round target is
offset + ratio * mean(reports). The closest report wins, and everything
within winner_band of the target counts as a statistical winner. With
offset 0 the iterated game contracts to 0; with offset o and ratio r the
fixed point is o / (1 - r), e.g. 10 for "5 plus 1/2 of the average".

This module builds the system prompts for all rule variants, runs the
two-call report pipeline against any backend, scores rounds, announces
winners through environments, and exports results.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Optional

from . import runtime
from .backends import (
    EXTRACTION_PROMPT,
    GenerationParams,
    backend_from_config,
    parse_last_number,
)
from .environment import Environment
from .messages import Message, Placeholder, canonical_json

log = logging.getLogger(__name__)


class EmptyReports(ValueError):
    pass


class UnparseableReport(ValueError):
    pass


class OutOfRangeReport(ValueError):
    pass


class MissingBackground(ValueError):
    pass


class MissingGroupInfo(ValueError):
    pass


@dataclass(frozen=True)
class GameRule:
    ratio: Fraction = Fraction(2, 3)
    offset: float = 0.0
    lower: float = 0.0
    upper: float = 100.0
    winner_band: float = 0.5
    variation_note: bool = False

    def __post_init__(self):
        if not 0 < self.ratio < 1:
            raise ValueError("ratio must be strictly between 0 and 1")
        if self.offset < 0:
            raise ValueError("offset must be >= 0")
        if not self.lower < self.upper:
            raise ValueError("lower bound must be below upper bound")
        if self.winner_band <= 0:
            raise ValueError("winner_band must be positive")

    @property
    def fixed_point(self) -> float:
        """The self-consistent report f* with f* = offset + ratio * f*."""
        return float(Fraction(self.offset) / (1 - self.ratio))

    def to_jsonable(self) -> dict:
        return {
            "ratio": [self.ratio.numerator, self.ratio.denominator],
            "offset": self.offset,
            "lower": self.lower,
            "upper": self.upper,
            "winner_band": self.winner_band,
            "variation_note": self.variation_note,
        }

    @classmethod
    def from_jsonable(cls, obj: dict) -> "GameRule":
        num, den = obj.get("ratio", [2, 3])
        return cls(
            ratio=Fraction(num, den),
            offset=float(obj.get("offset", 0.0)),
            lower=float(obj.get("lower", 0.0)),
            upper=float(obj.get("upper", 100.0)),
            winner_band=float(obj.get("winner_band", 0.5)),
            variation_note=bool(obj.get("variation_note", False)),
        )


# ---------------------------------------------------------------------------
# Prompt construction
# ---------------------------------------------------------------------------

PROMPT_VARIANTS = ("P1", "P2", "P3", "P4", "P5", "P7", "PGROUP")

_THINK = "Think step by step and then report your number."
_DIRECT = "Directly report your number without additional information."

VARIATION_NOTE_SENTENCE = (
    'This game is a variation of the famous "guess the 2/3 of the average" game.'
)

INDIVIDUAL_ANNOUNCEMENT = (
    "The winner number of this round is {winner}. Let's move on to the next round."
)

GROUP_ANNOUNCEMENT = (
    "The {phrase} of the average for this round is {winner}. "
    "The numbers reported by groups are {group_numbers}. "
    "Let's move on to the next round."
)


def _fmt_number(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else f"{x:g}"


def rule_phrase(rule: GameRule) -> str:
    """The target description as it appears in prompts: "2/3", "51/100",
    "5 plus 1/2", ..."""
    ratio = f"{rule.ratio.numerator}/{rule.ratio.denominator}"
    if rule.offset > 0:
        return f"{_fmt_number(rule.offset)} plus {ratio}"
    return ratio


def build_prompt(
    variant: str,
    rule: GameRule,
    background: Optional[str] = None,
    group: Optional[dict] = None,
) -> str:
    """Render the system prompt for one game variant.

    group is {"count": int, "id": int} and is required for PGROUP;
    background is required for P5. When rule.variation_note is set, the
    note sentence pointing at the classic game is appended.
    """
    if variant not in PROMPT_VARIANTS:
        raise ValueError(f"unknown prompt variant: {variant!r}")
    if variant == "P5" and not background:
        raise MissingBackground("variant P5 requires a character background")
    if variant == "PGROUP" and not group:
        raise MissingGroupInfo("variant PGROUP requires group count and id")

    phrase = rule_phrase(rule)
    bounds = f"between {_fmt_number(rule.lower)} and {_fmt_number(rule.upper)}, inclusive"

    if variant == "PGROUP":
        rules = (
            f"1. There are {group['count']} groups of players in the game.\n"
            f"2. Each player reports a real number {bounds}.\n"
            f"3. Each group reports the average of all players in the group.\n"
            f"4. The winner will be the group whose number is the closest to {phrase} "
            f"of the average of all groups' numbers.\n"
            f"5. You are in group {group['id']}."
        )
    else:
        rules = (
            f"1. Each player reports a real number {bounds}.\n"
            f"2. The winner will be the player whose number is the closest to {phrase} "
            f"of the average of all reported numbers."
        )

    if variant == "P5":
        header = (
            "You are playing a role in a multiplayer game, "
            "make sure your behavior fits the following character background."
        )
        sections = [header, f"# Character Background\n\n{background}"]
    else:
        header = "You are playing a multiplayer game."
        sections = [header]
    sections.append(f"# Game Rule\n{rules}")

    note_header, note_lines = None, []
    if variant == "P3":
        note_header, note_lines = "# Note:", ["All players are rational."]
    elif variant == "P4":
        note_header, note_lines = "# Note:", [
            "All players are rational.",
            "All players will try to guess the others' strategies to adjust their own strategies.",
        ]
    elif variant == "P5":
        note_header, note_lines = "# Note", [
            "Please strictly follow your character background in the game."
        ]

    if rule.variation_note:
        if note_lines:
            note_lines.append(VARIATION_NOTE_SENTENCE)
        else:
            sections.append(f"# Note\n{VARIATION_NOTE_SENTENCE}")
    if note_lines:
        numbered = "\n".join(f"{i}. {line}" for i, line in enumerate(note_lines, start=1))
        sections.append(f"{note_header}\n{numbered}")

    sections.append(_DIRECT if variant == "P1" else _THINK)
    return "\n\n".join(sections)


# ---------------------------------------------------------------------------
# Round arithmetic
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Stats:
    avg: float
    min: float
    max: float
    std: float
    median: float
    mode: float

    def to_jsonable(self) -> dict:
        return {
            "avg": self.avg,
            "min": self.min,
            "max": self.max,
            "std": self.std,
            "median": self.median,
            "mode": self.mode,
        }


def compute_target(rule: GameRule, reports) -> float:
    """offset + ratio * mean(reports), with the exact rational ratio applied
    before any rounding."""
    values = list(reports.values()) if isinstance(reports, dict) else list(reports)
    if not values:
        raise EmptyReports("cannot compute a target without reports")
    mean = Fraction(math.fsum(values)) / len(values)
    return float(Fraction(rule.offset) + rule.ratio * mean)


def determine_winners(reports: dict, target: float, band: float) -> dict:
    """Exact winners (all reports at minimal distance, ties included) and
    band winners (within the closed interval |report - target| <= band)."""
    if not reports:
        raise EmptyReports("cannot pick winners without reports")
    best = min(abs(v - target) for v in reports.values())
    exact = sorted(aid for aid, v in reports.items() if abs(v - target) == best)
    in_band = sorted(aid for aid, v in reports.items() if abs(v - target) <= band)
    return {"exact": exact, "band": in_band}


def summarize(reports) -> Stats:
    """Population statistics of the reported numbers.

    median of an even count is the mean of the middle two; mode is computed
    on values rounded to 2 decimals, smallest value winning ties.
    """
    values = list(reports.values()) if isinstance(reports, dict) else list(reports)
    if not values:
        raise EmptyReports("cannot summarize zero reports")
    n = len(values)
    avg = math.fsum(values) / n
    std = math.sqrt(math.fsum((v - avg) ** 2 for v in values) / n)
    ordered = sorted(values)
    if n % 2:
        median = ordered[n // 2]
    else:
        median = (ordered[n // 2 - 1] + ordered[n // 2]) / 2
    counts: dict[float, int] = {}
    for v in values:
        r = round(v, 2)
        counts[r] = counts.get(r, 0) + 1
    top = max(counts.values())
    mode = min(v for v, c in counts.items() if c == top)
    return Stats(avg=avg, min=ordered[0], max=ordered[-1], std=std, median=median, mode=mode)


@dataclass
class RoundResult:
    round_index: int
    reports: dict[str, float]
    target: float
    exact_winners: list[str]
    band_winners: list[str]
    stats: Stats
    token_counts: dict[str, int] = field(default_factory=dict)
    group_averages: Optional[dict[str, float]] = None

    def to_jsonable(self) -> dict:
        obj = {
            "round_index": self.round_index,
            "reports": self.reports,
            "target": self.target,
            "exact_winners": self.exact_winners,
            "band_winners": self.band_winners,
            "stats": self.stats.to_jsonable(),
            "token_counts": self.token_counts,
        }
        if self.group_averages is not None:
            obj["group_averages"] = self.group_averages
        return obj


# ---------------------------------------------------------------------------
# The two-call report pipeline and the player agent
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReportOutcome:
    value: float
    raw_text: str
    token_count: int


def elicit_report(player, params: GenerationParams) -> ReportOutcome:
    """Run the two-call pipeline: one call for the full response, one to
    extract the reported number from it.

    If the extraction output does not parse as a number, fall back to the
    last number in the first response. Values outside the rule's bounds are
    rejected, not clamped, so misbehaving backends stay visible.
    """
    first = player.backend.generate(player.system_prompt, list(player.history), params)
    extraction_input = Message(sender=player.name, role="user", content=first.text)
    second = player.backend.generate(EXTRACTION_PROMPT, [extraction_input], params)

    value: Optional[float]
    try:
        value = float(second.text.strip())
    except ValueError:
        value = parse_last_number(first.text)
    if value is None:
        raise UnparseableReport(
            f"no number found in either call (first response: {first.text[:80]!r})"
        )
    if not player.rule.lower <= value <= player.rule.upper:
        raise OutOfRangeReport(f"{value} outside [{player.rule.lower}, {player.rule.upper}]")
    return ReportOutcome(
        value=value, raw_text=first.text, token_count=first.token_count + second.token_count
    )


@runtime.register_agent_kind("player")
class PlayerAgent(runtime.Agent):
    """Game participant: keeps announcement history, reports on demand.

    params: system_prompt, rule (GameRule jsonable), backend (backend
    config), generation ({temperature, seed, max_tokens}).
    """

    def __init__(self, name: str, params: dict):
        super().__init__(name, params)
        self.system_prompt = params.get("system_prompt", "")
        self.rule = GameRule.from_jsonable(params.get("rule", {}))
        self.backend = backend_from_config(
            params.get("backend", {"kind": "strategy"}), agent_id=name, rule=self.rule
        )
        gen = params.get("generation", {})
        self.gen_params = GenerationParams(
            temperature=float(gen.get("temperature", 1.0)),
            seed=int(gen.get("seed", 0)),
            max_tokens=int(gen.get("max_tokens", 512)),
        )
        self.history: list[Message] = []

    def reply(self, inputs: list[Message]) -> Message:
        request = inputs[-1]
        if request.metadata.get("command") == "report":
            outcome = elicit_report(self, self.gen_params)
            return Message(
                sender=self.name,
                role="assistant",
                content=repr(outcome.value),
                metadata={"value": outcome.value, "token_count": outcome.token_count},
            )
        # Anything else (round announcements, listener notifications) joins
        # the conversation history.
        self.history.append(request)
        return Message(sender=self.name, role="assistant", content="", metadata={"ack": True})


def make_player_def(
    name: str,
    system_prompt: str,
    rule: GameRule,
    backend_cfg: dict,
    temperature: float = 1.0,
    seed: int = 0,
) -> runtime.AgentDef:
    return runtime.AgentDef(
        name=name,
        kind="player",
        params={
            "system_prompt": system_prompt,
            "rule": rule.to_jsonable(),
            "backend": backend_cfg,
            "generation": {"temperature": temperature, "seed": seed},
        },
    )


# ---------------------------------------------------------------------------
# Multi-round game loop
# ---------------------------------------------------------------------------


def run_game(
    agents: list[runtime.AgentRef],
    rule: GameRule,
    rounds: int,
    env: Environment,
    topology: str = "individual",
    group_count: int = 3,
    call_timeout: float = 120.0,
    on_round: Optional[Callable[[RoundResult], None]] = None,
) -> list[RoundResult]:
    """Play the game for a number of rounds and return per-round results.

    Reports are elicited in parallel through the actor runtime (proxies hand
    back placeholders that are gathered and then resolved). After scoring,
    the winner number is written into the environment's shared state and the
    announcement is delivered to every agent before the next round starts.
    In groups topology each group synchronizes through its own child
    environment under the shared global one.
    """
    if not agents:
        raise EmptyReports("no agents to run")
    if topology not in ("individual", "groups"):
        raise ValueError(f"unknown topology: {topology!r}")

    groups: list[tuple[str, Environment, list[runtime.AgentRef]]] = []
    if topology == "groups":
        for gi in range(group_count):
            members = agents[gi::group_count]
            genv = Environment(f"group-{gi + 1}", parent=env)
            for ref in members:
                genv.add_child(ref)
            groups.append((f"group-{gi + 1}", genv, members))
    else:
        attached = {c.agent_id for c in env.agent_children()}
        for ref in agents:
            if ref.agent_id not in attached:
                env.add_child(ref)

    results: list[RoundResult] = []
    for round_index in range(1, rounds + 1):
        reports, token_counts = _elicit_round(agents, round_index, call_timeout)
        if not reports:
            raise EmptyReports(f"every agent failed in round {round_index}")

        group_averages: Optional[dict[str, float]] = None
        if topology == "groups":
            group_averages = {
                gid: math.fsum(reports[r.agent_id] for r in members if r.agent_id in reports)
                / max(1, sum(1 for r in members if r.agent_id in reports))
                for gid, _, members in groups
            }
            target = compute_target(rule, list(group_averages.values()))
            winners = determine_winners(group_averages, target, rule.winner_band)
        else:
            target = compute_target(rule, reports)
            winners = determine_winners(reports, target, rule.winner_band)

        result = RoundResult(
            round_index=round_index,
            reports=reports,
            target=target,
            exact_winners=winners["exact"],
            band_winners=winners["band"],
            stats=summarize(reports),
            token_counts=token_counts,
            group_averages=group_averages,
        )
        results.append(result)
        if on_round is not None:
            on_round(result)

        env.set("winner", target)
        env.set("round", round_index)
        if round_index < rounds:
            _announce(rule, env, groups, topology, target, group_averages, round_index)
    return results


def _elicit_round(agents, round_index: int, call_timeout: float):
    request_meta = {"command": "report", "round": round_index}
    pending = []
    for ref in agents:
        msg = Message(sender="game", role="user", content="", metadata=dict(request_meta))
        try:
            pending.append((ref, runtime.call(ref, msg, timeout=call_timeout)))
        except Exception as exc:
            log.warning("agent %s failed to accept round %s: %s", ref.agent_id, round_index, exc)

    reports: dict[str, float] = {}
    token_counts: dict[str, int] = {}
    for ref, out in pending:
        try:
            reply = runtime.resolve(out, call_timeout) if isinstance(out, Placeholder) else out
        except Exception as exc:
            log.warning("agent %s failed in round %s: %s", ref.agent_id, round_index, exc)
            continue
        if "value" not in reply.metadata:
            log.warning("agent %s returned no value in round %s", ref.agent_id, round_index)
            continue
        reports[ref.agent_id] = float(reply.metadata["value"])
        token_counts[ref.agent_id] = int(reply.metadata.get("token_count", 0))
    return reports, token_counts


def _announce(rule, env, groups, topology, target, group_averages, round_index):
    if topology == "groups":
        numbers = ", ".join(
            f"Group {i + 1}: {group_averages[gid]:.2f}" for i, (gid, _, _) in enumerate(groups)
        )
        content = GROUP_ANNOUNCEMENT.format(
            phrase=rule_phrase(rule), winner=f"{target:.2f}", group_numbers=numbers
        )
        metadata = {"command": "announce", "winner": target, "round": round_index}
        for i, (gid, genv, _) in enumerate(groups):
            meta = dict(metadata)
            for j, (other_gid, _, _) in enumerate(groups):
                meta[f"group_avg_{j + 1}"] = group_averages[other_gid]
            _wait_all(genv.notify_agents(content, meta))
    else:
        content = INDIVIDUAL_ANNOUNCEMENT.format(winner=f"{target:.2f}")
        metadata = {"command": "announce", "winner": target, "round": round_index}
        _wait_all(env.notify_agents(content, metadata))


def _wait_all(outcomes):
    # Announcements must land before the next round begins.
    for out in outcomes:
        if isinstance(out, Placeholder):
            runtime.resolve(out)


# ---------------------------------------------------------------------------
# Result export
# ---------------------------------------------------------------------------


def export_results(results: list[RoundResult], out_dir) -> list[Path]:
    """Write rounds.json, stats.csv, and hist.csv into out_dir.

    hist.csv holds a 1.0-wide histogram over [0, 100] per round. Raises
    OSError if the directory is not writable.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    rounds_path = out / "rounds.json"
    rounds_path.write_bytes(canonical_json([r.to_jsonable() for r in results]))

    stats_path = out / "stats.csv"
    with open(stats_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["round", "avg", "min", "max", "std", "median", "mode", "target"])
        for r in results:
            s = r.stats
            writer.writerow(
                [r.round_index]
                + [f"{v:.6f}" for v in (s.avg, s.min, s.max, s.std, s.median, s.mode, r.target)]
            )

    hist_path = out / "hist.csv"
    with open(hist_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["round", "bin_lo", "bin_hi", "count"])
        for r in results:
            bins = [0] * 100
            for v in r.reports.values():
                bins[min(int(v), 99)] += 1
            for i, count in enumerate(bins):
                writer.writerow([r.round_index, i, i + 1, count])
    return [rounds_path, stats_path, hist_path]
