"""Multi-round convergence of the number-guessing game at desk scale.

A thousand deterministic strategy agents (level-k thinkers plus winner
followers) drive the classic ratio-2/3 game toward 0 and the
"5 plus 1/2 of the average" variant toward its fixed point at 10. Winner
numbers propagate between rounds through the environment's shared state.
"""

from fractions import Fraction

from swarmsim import runtime
from swarmsim.backends import allocate_mix, parse_strategy_mix
from swarmsim.environment import Environment
from swarmsim.game import GameRule, build_prompt, export_results, make_player_def, run_game

MIX = (
    "level_k:1=0.15,level_k:2=0.15,level_k:3=0.15,level_k:4=0.15,"
    "ratio_of_winner=0.2,below_winner=0.2"
)


def play(rule, rounds, variant, seed=11, agents=1000):
    strategies = allocate_mix(parse_strategy_mix(MIX), agents, seed)
    prompt = build_prompt(variant, rule)
    refs = [
        runtime.spawn_local(
            make_player_def(
                f"p{i}", prompt, rule,
                {"kind": "strategy", "strategy": s.to_jsonable(), "seed": seed},
                seed=seed,
            )
        )
        for i, s in enumerate(strategies)
    ]
    results = run_game(refs, rule, rounds, Environment("demo"))
    for r in results:
        print(
            f"  round {r.round_index}: avg={r.stats.avg:7.3f}  target={r.target:7.3f}  "
            f"std={r.stats.std:6.3f}  band winners={len(r.band_winners)}"
        )
    for ref in refs:
        runtime.stop(ref)
    return results


print("classic game, ratio 2/3 (fixed point 0):")
results = play(GameRule(ratio=Fraction(2, 3)), rounds=5, variant="P2")

print('\nvariant "5 plus 1/2 of the average" (fixed point 10):')
play(GameRule(ratio=Fraction(1, 2), offset=5.0), rounds=8, variant="P7")

out = export_results(results, "demo_results")
print("\nexported:", ", ".join(str(p) for p in out))
