"""Ranking metrics for candidate-selection evaluation plus head cost and
latency accounting.

All rank-based quantities are computed with exact rational arithmetic and
converted to float once at the end, so results are bit-stable and match
enumeration oracles exactly. Ties are broken by candidate index.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from .errors import ConfigError, DataError

__all__ = [
    "RankedGroup",
    "RankReport",
    "HeadCost",
    "average_precision",
    "reciprocal_rank",
    "precision_at_k",
    "hit_rate_at_k",
    "rank_report",
    "report_to_json",
    "head_cost",
    "jointwise_latency_ratio",
]


@dataclass(frozen=True)
class RankedGroup:
    scores: tuple[float, ...]
    relevance: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))
        object.__setattr__(self, "relevance", tuple(int(r) for r in self.relevance))
        if len(self.scores) != len(self.relevance):
            raise DataError("scores and relevance must align")
        if not self.scores:
            raise DataError("group needs at least one candidate")
        if any(r not in (0, 1) for r in self.relevance):
            raise DataError("relevance must be binary")

    @property
    def n_relevant(self) -> int:
        return sum(self.relevance)


def _ranking(g: RankedGroup) -> list[int]:
    # descending score; equal scores keep candidate order
    return sorted(range(len(g.scores)), key=lambda i: (-g.scores[i], i))


def _require_relevant(g: RankedGroup) -> None:
    if g.n_relevant == 0:
        raise DataError("group has no relevant candidate")


def _ap(g: RankedGroup) -> Fraction:
    _require_relevant(g)
    hits = 0
    total = Fraction(0)
    for rank, idx in enumerate(_ranking(g), start=1):
        if g.relevance[idx]:
            hits += 1
            total += Fraction(hits, rank)
    return total / g.n_relevant


def _rr(g: RankedGroup) -> Fraction:
    _require_relevant(g)
    for rank, idx in enumerate(_ranking(g), start=1):
        if g.relevance[idx]:
            return Fraction(1, rank)
    raise AssertionError("unreachable")


def _p_at_k(g: RankedGroup, k: int) -> Fraction:
    _require_relevant(g)
    if k < 1:
        raise ConfigError("k must be >= 1")
    hits = sum(g.relevance[i] for i in _ranking(g)[:k])
    return Fraction(hits, k)


def average_precision(g: RankedGroup) -> float:
    return float(_ap(g))


def reciprocal_rank(g: RankedGroup) -> float:
    return float(_rr(g))


def precision_at_k(g: RankedGroup, k: int) -> float:
    """Relevant fraction of the top k slots; short groups leave the missing
    slots counted as misses."""
    return float(_p_at_k(g, k))


def hit_rate_at_k(g: RankedGroup, k: int) -> float:
    _require_relevant(g)
    if k < 1:
        raise ConfigError("k must be >= 1")
    return 1.0 if any(g.relevance[i] for i in _ranking(g)[:k]) else 0.0


@dataclass(frozen=True)
class RankReport:
    map: float
    mrr: float
    p_at_1: float
    n_groups: int
    excluded: int


def rank_report(groups: Iterable[RankedGroup]) -> RankReport:
    """Mean metrics over groups that have at least one relevant candidate;
    the rest are excluded with a warning (clean-setting evaluation)."""
    kept: list[RankedGroup] = []
    excluded = 0
    for g in groups:
        if g.n_relevant == 0:
            excluded += 1
        else:
            kept.append(g)
    if excluded:
        warnings.warn(
            f"excluded {excluded} group(s) without a relevant candidate",
            stacklevel=2,
        )
    if not kept:
        raise DataError("no groups with a relevant candidate")
    n = len(kept)
    sum_ap = Fraction(0)
    sum_rr = Fraction(0)
    sum_p1 = Fraction(0)
    for g in kept:
        sum_ap += _ap(g)
        sum_rr += _rr(g)
        sum_p1 += _p_at_k(g, 1)
    return RankReport(
        map=float(sum_ap / n),
        mrr=float(sum_rr / n),
        p_at_1=float(sum_p1 / n),
        n_groups=n,
        excluded=excluded,
    )


def report_to_json(r: RankReport) -> dict:
    return {
        "map": r.map,
        "mrr": r.mrr,
        "p@1": r.p_at_1,
        "n_groups": r.n_groups,
        "excluded": r.excluded,
    }


# --- head cost and latency ---------------------------------------------------------

_LM_HEADS = ("mlm", "slm")
_DETECT_HEADS = ("rts", "crts")


@dataclass(frozen=True)
class HeadCost:
    objective: str
    d: int
    vocab_size: int | None
    params: int
    flops_per_token: int


def head_cost(objective: str, d: int, vocab_size: int | None = None) -> HeadCost:
    """Parameter and per-token FLOP counts for the output head alone; the
    encoder body is shared across objectives and excluded. FLOPs count each
    multiply-add as two operations."""
    if d < 1:
        raise ConfigError("d must be positive")
    name = objective.lower()
    if name in _LM_HEADS:
        if vocab_size is None or vocab_size < 1:
            raise ConfigError(f"{name} head needs a positive vocab_size")
        params = vocab_size * d
    elif name in _DETECT_HEADS:
        params = 2 * d
    else:
        raise ConfigError(f"unknown head objective {objective!r}")
    return HeadCost(
        objective=name,
        d=d,
        vocab_size=vocab_size,
        params=params,
        flops_per_token=2 * params,
    )


def jointwise_latency_ratio(k: int) -> float:
    """Inference-cost ratio of scoring k candidates jointly in one padded
    pass versus k separate pairwise passes; grows linearly with slope 1/4."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    return (k + 1) ** 2 / (4 * k)
