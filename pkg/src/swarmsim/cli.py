"""Command-line entry points: agent-server, agent-hub, and simrun.

Exit codes for simrun: 0 on success, 2 on configuration errors, 3 on
runtime errors.
"""

from __future__ import annotations

import argparse
import logging
import signal
import sys
import threading
from fractions import Fraction

from . import game, runtime  # noqa: F401  (importing game registers the player kind)
from .backends import allocate_mix, parse_strategy_mix
from .environment import Environment
from .game import GameRule, build_prompt, export_results, make_player_def, run_game
from .hub import HeartbeatReporter, HubServer
from .population import generate_background, load_config, sample_profiles
from .runtime import AgentServer, ServerConfig


def _parse_addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


def agent_server_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="agent-server", description="Run an agent server.")
    parser.add_argument("--listen", required=True, metavar="HOST:PORT")
    parser.add_argument("--mode", choices=["many-to-one", "one-to-one"], default="many-to-one")
    parser.add_argument("--capacity", type=int, default=1024)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--hub", default=None, help="hub URL to register with")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    host, port = _parse_addr(args.listen)
    config = ServerConfig(
        host=host,
        port=port,
        mode=args.mode.replace("-", "_"),
        capacity=args.capacity,
        workers=args.workers,
    )
    server = AgentServer(config)
    reporter = None

    def _terminate(signum, frame):
        if reporter:
            reporter.stop()
        server.shutdown()

    # Handlers go in before the port opens so an early SIGTERM still means a
    # clean exit.
    signal.signal(signal.SIGTERM, _terminate)
    signal.signal(signal.SIGINT, _terminate)
    try:
        server.start()
    except runtime.BindFailure as exc:
        print(f"bind failed: {exc}", file=sys.stderr)
        return 1

    if args.hub:
        reporter = HeartbeatReporter(args.hub, server, advertise_host=host)
        reporter.start()
    server.serve_forever()
    return 0


def agent_hub_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="agent-hub", description="Run the lifecycle hub.")
    parser.add_argument("--listen", required=True, metavar="HOST:PORT")
    parser.add_argument("--ui", default=None, help="directory of dashboard static files")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    host, port = _parse_addr(args.listen)
    hub = None

    def _terminate(signum, frame):
        # shutdown() joins the serve_forever loop, so it cannot run on the
        # thread the signal interrupted.
        if hub is not None:
            threading.Thread(target=hub.shutdown, daemon=True).start()

    signal.signal(signal.SIGTERM, _terminate)
    signal.signal(signal.SIGINT, _terminate)
    hub = HubServer(host=host, port=port, ui_dir=args.ui)
    print(f"hub listening on {hub.url}", flush=True)
    hub.serve_forever()
    return 0


_DEFAULT_MIX = (
    "level_k:1=0.15,level_k:2=0.15,level_k:3=0.15,level_k:4=0.15,"
    "ratio_of_winner=0.2,below_winner=0.2"
)


def simrun_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="simrun", description="Run a multi-round game.")
    parser.add_argument("--agents", type=int, required=True)
    parser.add_argument("--rounds", type=int, required=True)
    parser.add_argument("--ratio", default="2/3", metavar="P/Q")
    parser.add_argument("--offset", type=float, default=0.0)
    parser.add_argument("--note", action="store_true", help="append the variation note")
    parser.add_argument(
        "--prompt", choices=["1", "2", "3", "4", "5", "7", "group"], default="2"
    )
    parser.add_argument(
        "--backend", choices=["strategy", "dummy", "scripted", "remote"], default="strategy"
    )
    parser.add_argument("--strategy-mix", default=_DEFAULT_MIX)
    parser.add_argument("--groups", type=int, default=0)
    parser.add_argument("--population-config", default=None)
    parser.add_argument("--servers", default=None, help="comma-separated HOST:PORT list")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", required=True)
    parser.add_argument("--script", action="append", default=[], help="scripted backend entries")
    parser.add_argument("--remote-url", default=None)
    parser.add_argument("--remote-model", default="")
    parser.add_argument("--remote-key-env", default=None)
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.WARNING)
    try:
        plan = _build_plan(args)
    except (ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return _execute_plan(args, plan)
    except Exception as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


def _build_plan(args) -> dict:
    if args.agents < 1:
        raise ValueError("--agents must be >= 1")
    if args.rounds < 1:
        raise ValueError("--rounds must be >= 1")
    num, _, den = args.ratio.partition("/")
    rule = GameRule(
        ratio=Fraction(int(num), int(den or "1")),
        offset=args.offset,
        variation_note=args.note,
    )

    variant = {"1": "P1", "2": "P2", "3": "P3", "4": "P4", "5": "P5", "7": "P7", "group": "PGROUP"}[
        args.prompt
    ]
    group_count = args.groups if args.groups > 0 else 3

    backgrounds = None
    if variant == "P5":
        if not args.population_config:
            raise ValueError("--prompt 5 requires --population-config")
        from .backends import StrategyBackend, StrategyConfig

        cfg = load_config(args.population_config)
        profiles = sample_profiles(cfg, seed=args.seed)
        generator = StrategyBackend(
            StrategyConfig(kind="level_k"), rule, agent_id="background-gen", seed=args.seed
        )
        backgrounds = []
        for i in range(args.agents):
            profile = profiles[i % len(profiles)]
            backgrounds.append(generate_background(profile, generator, args.seed + i, 1.0))

    mix = parse_strategy_mix(args.strategy_mix) if args.backend == "strategy" else None
    servers = [_parse_addr(s) for s in args.servers.split(",")] if args.servers else []
    return {
        "rule": rule,
        "variant": variant,
        "group_count": group_count,
        "backgrounds": backgrounds,
        "mix": mix,
        "servers": servers,
    }


def _backend_cfg(args, index: int, plan: dict, strategies) -> dict:
    if args.backend == "strategy":
        return {
            "kind": "strategy",
            "strategy": strategies[index].to_jsonable(),
            "seed": args.seed,
        }
    if args.backend == "dummy":
        return {"kind": "dummy", "delay": 1.0, "seed": args.seed + index}
    if args.backend == "scripted":
        if not args.script:
            raise ValueError("--backend scripted requires at least one --script entry")
        return {"kind": "scripted", "entries": list(args.script)}
    if not args.remote_url:
        raise ValueError("--backend remote requires --remote-url")
    return {
        "kind": "remote",
        "base_url": args.remote_url,
        "model": args.remote_model,
        "api_key_env": args.remote_key_env,
    }


def _execute_plan(args, plan) -> int:
    rule: GameRule = plan["rule"]
    variant = plan["variant"]
    strategies = allocate_mix(plan["mix"], args.agents, args.seed) if plan["mix"] else None

    refs = []
    for i in range(args.agents):
        if variant == "PGROUP":
            prompt = build_prompt(
                variant, rule, group={"count": plan["group_count"], "id": (i % plan["group_count"]) + 1}
            )
        elif variant == "P5":
            prompt = build_prompt(variant, rule, background=plan["backgrounds"][i])
        else:
            prompt = build_prompt(variant, rule)
        agent_def = make_player_def(
            f"player-{i:05d}", prompt, rule, _backend_cfg(args, i, plan, strategies), seed=args.seed
        )
        ref = runtime.spawn_local(agent_def)
        if plan["servers"]:
            ref = runtime.to_dist(ref, plan["servers"][i % len(plan["servers"])])
        refs.append(ref)

    env = Environment("game-env")
    topology = "groups" if variant == "PGROUP" else "individual"
    results = run_game(
        refs, rule, args.rounds, env, topology=topology, group_count=plan["group_count"]
    )
    export_results(results, args.out)
    for r in results:
        print(
            f"round {r.round_index}: avg={r.stats.avg:.4f} target={r.target:.4f} "
            f"band_winners={len(r.band_winners)}"
        )
    return 0


def main(argv=None) -> int:
    """Dispatcher so `python -m swarmsim.cli <command> ...` works uninstalled."""
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        print("usage: swarmsim.cli {agent-server|agent-hub|simrun} ...", file=sys.stderr)
        return 2
    command, rest = argv[0], argv[1:]
    if command == "agent-server":
        return agent_server_main(rest)
    if command == "agent-hub":
        return agent_hub_main(rest)
    if command == "simrun":
        return simrun_main(rest)
    print(f"unknown command: {command}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
