"""Versioned prompt templates, stored as plain text next to this module."""

from __future__ import annotations

from functools import cache
from importlib import resources

PAIRWISE_JUDGE = "pairwise_judge_v1"
REFERENCE_JUDGE = "reference_judge_v1"
QUERY_CATEGORIZER = "query_categorizer_v1"


@cache
def load(name: str) -> str:
    return resources.files(__package__).joinpath(f"{name}.txt").read_text(encoding="utf-8")


def fill(name: str, **values: str) -> str:
    """Substitute ``{key}`` placeholders without interpreting other braces."""
    text = load(name)
    for key, value in values.items():
        text = text.replace("{" + key + "}", value)
    return text
