"""Population configuration, profile sampling, and background generation.

A YAML config declares the population size and, per aspect (education,
gender, ...), a categorical distribution with proportions. Profiles are
sampled from those distributions and can be expanded into free-text
character backgrounds by a generation backend.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Optional

import yaml

PROPORTION_TOLERANCE = 1e-6

BACKGROUND_TAG = "## Background"

# Instruction template for the background generation task. {JSON} is replaced
# by the profile's aspect assignments.
BACKGROUND_META_PROMPT = """You need to generate a person's background description based on the user-provided JSON format information.
In addition to the information provided by the user, each background description must also include the person's name, age, gender, job, and a paragraph describing the character's personality.
Please output the background description after "## Background" tag.

{JSON}"""


class ParseError(ValueError):
    pass


class InvalidProportions(ValueError):
    pass


class MissingBackgroundTag(ValueError):
    pass


@dataclass(frozen=True)
class Category:
    name: str
    proportion: float


@dataclass(frozen=True)
class Aspect:
    name: str
    categories: tuple[Category, ...]


@dataclass(frozen=True)
class PopulationConfig:
    population: int
    distributions: tuple[Aspect, ...]


@dataclass
class AgentProfile:
    profile_id: str
    aspects: dict[str, str]
    background: Optional[str] = field(default=None)


def load_config(path) -> PopulationConfig:
    """Load and validate a population config; bad proportion sums are rejected,
    never silently renormalized."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f)
    except yaml.YAMLError as exc:
        raise ParseError(f"invalid YAML: {exc}") from exc
    return config_from_obj(raw)


def config_from_obj(raw) -> PopulationConfig:
    if not isinstance(raw, dict):
        raise ParseError("config must be a mapping")
    population = raw.get("population")
    if not isinstance(population, int) or isinstance(population, bool) or population <= 0:
        raise ParseError("population must be a positive integer")
    distributions = raw.get("distributions")
    if not isinstance(distributions, list) or not distributions:
        raise ParseError("distributions must be a non-empty list")

    aspects = []
    seen_names = set()
    for entry in distributions:
        if not isinstance(entry, dict) or "name" not in entry or "categories" not in entry:
            raise ParseError("each distribution needs a name and categories")
        name = entry["name"]
        if name in seen_names:
            raise ParseError(f"duplicate aspect name: {name!r}")
        seen_names.add(name)
        categories = []
        seen_categories = set()
        for cat in entry["categories"]:
            if not isinstance(cat, dict) or "name" not in cat or "proportion" not in cat:
                raise ParseError(f"aspect {name!r}: each category needs a name and proportion")
            if cat["name"] in seen_categories:
                raise ParseError(f"aspect {name!r}: duplicate category {cat['name']!r}")
            seen_categories.add(cat["name"])
            proportion = float(cat["proportion"])
            if proportion < 0:
                raise InvalidProportions(
                    f"aspect {name!r}: negative proportion for {cat['name']!r}"
                )
            categories.append(Category(name=cat["name"], proportion=proportion))
        total = sum(c.proportion for c in categories)
        if abs(total - 1.0) > PROPORTION_TOLERANCE:
            raise InvalidProportions(f"aspect {name!r}: proportions sum to {total}, expected 1")
        aspects.append(Aspect(name=name, categories=tuple(categories)))
    return PopulationConfig(population=population, distributions=tuple(aspects))


def largest_remainder_counts(proportions: list[float], total: int) -> list[int]:
    """Integer allocation of `total` across proportions: floor each quota,
    hand out the remainder by largest fractional part (ties to earlier
    entries)."""
    quotas = [p * total for p in proportions]
    counts = [int(q) for q in quotas]
    short = total - sum(counts)
    remainders = sorted(
        range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i)
    )
    for i in remainders[:short]:
        counts[i] += 1
    return counts


def sample_profiles(
    cfg: PopulationConfig, seed: int, mode: str = "independent"
) -> list[AgentProfile]:
    """Draw one profile per member of the population, deterministically.

    independent: each aspect is sampled i.i.d. from its categorical
    distribution. exact_quota: per-category counts follow the
    largest-remainder allocation exactly, shuffled by the seed.
    """
    if mode not in ("independent", "exact_quota"):
        raise ValueError(f"unknown sampling mode: {mode!r}")
    n = cfg.population
    rng = random.Random(seed)
    profiles = [AgentProfile(profile_id=f"profile-{i:06d}", aspects={}) for i in range(n)]

    for aspect in cfg.distributions:
        names = [c.name for c in aspect.categories]
        weights = [c.proportion for c in aspect.categories]
        if mode == "independent":
            assignment = rng.choices(names, weights=weights, k=n)
        else:
            counts = largest_remainder_counts(weights, n)
            assignment = [name for name, c in zip(names, counts) for _ in range(c)]
            rng.shuffle(assignment)
        for profile, value in zip(profiles, assignment):
            profile.aspects[aspect.name] = value
    return profiles


def build_generation_instruction(profile: AgentProfile) -> str:
    """Fill the profile's aspects into the background meta prompt."""
    return BACKGROUND_META_PROMPT.replace(
        "{JSON}", json.dumps(profile.aspects, ensure_ascii=False)
    )


def generate_background(profile: AgentProfile, backend, seed: int, temperature: float) -> str:
    """Ask a backend for a background description and extract the tagged text.

    The backend output must contain the "## Background" tag; everything after
    the first tag line becomes the profile's background.
    """
    from .backends import GenerationParams

    instruction = build_generation_instruction(profile)
    params = GenerationParams(temperature=temperature, seed=seed)
    result = backend.generate(instruction, [], params)
    background = extract_background(result.text)
    profile.background = background
    return background


def extract_background(text: str) -> str:
    idx = text.find(BACKGROUND_TAG)
    if idx < 0:
        raise MissingBackgroundTag(f"no {BACKGROUND_TAG!r} tag in backend output")
    after = text[idx + len(BACKGROUND_TAG):]
    return after.lstrip(" \t").lstrip("\n").strip()
