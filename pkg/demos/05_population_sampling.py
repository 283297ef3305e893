"""Population configs: categorical sampling and background generation.

The YAML schema pairs a population size with per-aspect categorical
distributions. exact_quota sampling hits the proportions exactly via
largest-remainder allocation; independent sampling draws i.i.d. Profiles
expand into prose backgrounds through a generation backend.
"""

import collections

from swarmsim.backends import StrategyBackend, StrategyConfig
from swarmsim.game import GameRule
from swarmsim.population import (
    build_generation_instruction,
    config_from_obj,
    generate_background,
    sample_profiles,
)

config = config_from_obj(
    {
        "population": 10,
        "distributions": [
            {
                "name": "Education Level",
                "categories": [
                    {"name": level, "proportion": 0.2}
                    for level in (
                        "Elementary School",
                        "High School",
                        "Bachelor's Degree",
                        "Master's Degree",
                        "Ph.D.",
                    )
                ],
            },
            {
                "name": "Gender",
                "categories": [
                    {"name": "Male", "proportion": 0.5},
                    {"name": "Female", "proportion": 0.5},
                ],
            },
        ],
    }
)

profiles = sample_profiles(config, seed=7, mode="exact_quota")
counts = collections.Counter(p.aspects["Education Level"] for p in profiles)
print("exact_quota at population 10 (0.2 each -> exactly 2 per level):")
for level, count in sorted(counts.items()):
    print(f"  {level}: {count}")

profile = profiles[0]
print("\ninstruction for one profile:")
print(build_generation_instruction(profile))

generator = StrategyBackend(StrategyConfig(kind="level_k"), GameRule(), agent_id="bg", seed=0)
for seed in (1, 2):
    text = generate_background(profile, generator, seed=seed, temperature=1.0)
    print(f"\nbackground with seed {seed} (first line): {text.splitlines()[0]}")
