"""Seeded generators for critique parser fixtures, shared by unit and acceptance tests."""

from __future__ import annotations

import itertools
import random

from cgiagent.trajectory import Grade

WORDS = (
    "the action good poor neutral excellent very is not valid craft get oak log inventory step "
    "redundant items needed later contributes efficient search click buy [size] price < 50.00 "
    "grading revision suggested feasibility: contribution efficiency ## # - * , . ; 'quoted' \"x\""
).split()


def _sentence(rng: random.Random) -> str:
    words = [rng.choice(WORDS) for _ in range(rng.randint(1, 25))]
    text = " ".join(words)
    if rng.random() < 0.3:
        text += "\n" + " ".join(rng.choice(WORDS) for _ in range(rng.randint(1, 8)))
    # a header token at a line start would open a new section; keep it inline
    lines = [ln.lstrip("# ").strip() or "x" for ln in text.split("\n")]
    return "\n".join(lines).strip()


def fuzzed_critiques(n: int, seed: int = 0):
    """Yield (contribution, feasibility, efficiency, grade, revision) tuples."""
    rng = random.Random(seed)
    for _ in range(n):
        revision = None if rng.random() < 0.25 else _sentence(rng)
        if revision is not None and revision.lower() in {"none", "n/a", "na", "none.", "n/a."}:
            revision = "use " + revision
        yield (_sentence(rng), _sentence(rng), _sentence(rng), rng.choice(list(Grade)), revision)


def very_poor_variants(n: int = 100) -> list[str]:
    """Adversarial spellings of the lowest grade, each a full critique text."""
    spellings = ["Very Poor", "very poor", "VERY POOR", "Very-Poor", "very_poor", "Very  Poor", "Very\tPoor", "VeRy PoOr", "very poor!", "Very Poor:"]
    wrappers = ["{}", "**{}**", "{}.", "[{}]", " {} ", "{} (not Poor, worse)", "'{}'", "{} - the action is poor", "Grade: {}", "{}; Poor would be too kind"]
    texts = []
    for spelling, wrap in itertools.islice(itertools.product(spellings, wrappers), n):
        texts.append(
            "## Contribution: The action is poor.\n\n"
            "## Feasibility: Poor choice of items.\n\n"
            "## Efficiency: Poor.\n\n"
            f"## Overall Grading: {wrap.format(spelling)}\n\n"
            "## Suggested Revision: get oak log"
        )
    return texts
