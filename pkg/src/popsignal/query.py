"""Time-dependent query expansion.

For every look-back step ``k = 1..k_past`` the probe's tags are expanded with a
positive and a negative tag and paired with the window ``[t-k-W, t-k]``.
"""
from __future__ import annotations

from dataclasses import dataclass

from .core import Probe, TimeInterval, ValidationError

STANDARD = "standard"
NO_EXPANSION = "no_expansion"
MISALIGNED_PAST = "misaligned_past"
MODES = (STANDARD, NO_EXPANSION, MISALIGNED_PAST)

POSITIVE = "positive"
NEGATIVE = "negative"
NEUTRAL = "neutral"
_POLARITY_LETTER = {POSITIVE: "p", NEGATIVE: "m", NEUTRAL: "n"}


@dataclass(frozen=True)
class ExpansionConfig:
    k_past: int = 52
    window_w: int = 4
    positive_tag: str = "fashionable"
    negative_tag: str = "unfashionable"
    mode: str = STANDARD

    def __post_init__(self):
        if self.k_past < 1 or self.window_w < 1:
            raise ValidationError("k_past and window_w must be >= 1")
        if self.mode not in MODES:
            raise ValidationError(f"unknown expansion mode {self.mode!r}")
        if self.mode != NO_EXPANSION:
            pos, neg = self.positive_tag.strip().lower(), self.negative_tag.strip().lower()
            if not pos or not neg:
                raise ValidationError("expansion tags must be non-blank")
            if pos == neg:
                raise ValidationError("positive and negative tags must differ")


@dataclass(frozen=True)
class QuerySpec:
    """One web query: base tags, optional expansion tag, polarity and window."""

    base: tuple
    expansion: str | None
    polarity: str
    interval: TimeInterval
    step_k: int

    @property
    def tokens(self) -> tuple:
        return self.base + ((self.expansion,) if self.expansion else ())


def expand(probe: Probe, cfg: ExpansionConfig) -> list[QuerySpec]:
    """All queries for ``probe``, ``k`` ascending and positive before negative."""
    if not probe.tags:
        raise ValidationError("probe has no tags")
    t = probe.observation_week
    shift = -cfg.k_past if cfg.mode == MISALIGNED_PAST else 0
    specs = []
    for k in range(1, cfg.k_past + 1):
        interval = TimeInterval(t - k - cfg.window_w, t - k).shifted(shift)
        if cfg.mode == NO_EXPANSION:
            specs.append(QuerySpec(probe.tags, None, NEUTRAL, interval, k))
            continue
        specs.append(QuerySpec(probe.tags, cfg.positive_tag.strip().lower(), POSITIVE, interval, k))
        specs.append(QuerySpec(probe.tags, cfg.negative_tag.strip().lower(), NEGATIVE, interval, k))
    return specs


def canonical_key(q: QuerySpec) -> str:
    """Order-insensitive address of a query, e.g. ``long sleeve+yellow+fashionable@95-99#p``."""
    parts = sorted(tok.strip().lower() for tok in q.base)
    if q.expansion:
        parts.append(q.expansion.strip().lower())
    return "+".join(parts) + f"@{q.interval.start}-{q.interval.end}#{_POLARITY_LETTER[q.polarity]}"
