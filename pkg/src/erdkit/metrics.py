"""Decision-based (ERDE, F1, latency) and ranking-based (P@10, NDCG) metrics."""
from __future__ import annotations

import math
import statistics
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .corpus import POSITIVE

DEFAULT_PENALTY_SLOPE = 0.0078
DEFAULT_THETAS = (5, 50)
CHECKPOINTS = (1, 100, 500, 1000)


class MetricsError(ValueError):
    pass


class SmallCohortWarning(UserWarning):
    pass


@dataclass(frozen=True)
class UserOutcome:
    subject_id: str
    gold: str
    predicted: str
    delay: int

    def __post_init__(self):
        if self.delay < 1:
            raise MetricsError(f"{self.subject_id}: delay must be >= 1")

    @property
    def gold_pos(self) -> bool:
        return self.gold == POSITIVE

    @property
    def pred_pos(self) -> bool:
        return self.predicted == POSITIVE


@dataclass(frozen=True)
class ErdeConfig:
    theta: int = 50
    c_fp: float | None = None  # None: share of gold positives
    c_fn: float = 1.0
    c_tp: float = 1.0

    def __post_init__(self):
        if self.theta < 1:
            raise MetricsError("theta must be >= 1")
        for name in ("c_fp", "c_fn", "c_tp"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise MetricsError(f"{name} must be nonnegative")


def latency_cost(k: float, theta: float) -> float:
    """Sigmoid lateness factor ``1 - 1/(1 + exp(k - theta))``."""
    x = k - theta
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _check_unique(outcomes: Sequence[UserOutcome]) -> None:
    ids = [o.subject_id for o in outcomes]
    if len(set(ids)) != len(ids):
        raise MetricsError("duplicate subject in outcomes")


def erde(outcomes: Sequence[UserOutcome], cfg: ErdeConfig) -> float:
    outcomes = list(outcomes)
    if not outcomes:
        raise MetricsError("no outcomes")
    _check_unique(outcomes)
    c_fp = cfg.c_fp
    if c_fp is None:
        c_fp = sum(o.gold_pos for o in outcomes) / len(outcomes)
    total = 0.0
    for o in outcomes:
        if o.pred_pos and not o.gold_pos:
            total += c_fp
        elif not o.pred_pos and o.gold_pos:
            total += cfg.c_fn
        elif o.pred_pos and o.gold_pos:
            total += latency_cost(o.delay, cfg.theta) * cfg.c_tp
    return total / len(outcomes)


def latency_penalty(k: float, p: float = DEFAULT_PENALTY_SLOPE) -> float:
    if k < 1:
        raise MetricsError("k must be >= 1")
    return -1.0 + 2.0 / (1.0 + math.exp(-p * (k - 1)))


def speed(k: float, p: float = DEFAULT_PENALTY_SLOPE) -> float:
    return 1.0 - latency_penalty(k, p)


@dataclass
class DecisionMetrics:
    precision: float
    recall: float
    f1: float
    erde: dict[int, float]
    latency_tp: float | None
    speed: float
    f_latency: float
    tp: int
    fp: int
    fn: int
    tn: int


def decision_metrics(outcomes: Sequence[UserOutcome], erde_cfgs: Iterable[ErdeConfig] | None = None,
                     p: float = DEFAULT_PENALTY_SLOPE) -> DecisionMetrics:
    outcomes = list(outcomes)
    _check_unique(outcomes)
    if not any(o.gold_pos for o in outcomes):
        raise MetricsError("need at least one gold-positive user")
    if erde_cfgs is None:
        erde_cfgs = [ErdeConfig(theta=t) for t in DEFAULT_THETAS]
    tp = sum(o.pred_pos and o.gold_pos for o in outcomes)
    fp = sum(o.pred_pos and not o.gold_pos for o in outcomes)
    fn = sum(not o.pred_pos and o.gold_pos for o in outcomes)
    tn = len(outcomes) - tp - fp - fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    tp_delays = [o.delay for o in outcomes if o.pred_pos and o.gold_pos]
    if tp_delays:
        latency = float(statistics.median(tp_delays))
        spd = speed(latency, p)
    else:
        latency, spd = None, 0.0
    return DecisionMetrics(
        precision=precision, recall=recall, f1=f1,
        erde={c.theta: erde(outcomes, c) for c in erde_cfgs},
        latency_tp=latency, speed=spd, f_latency=f1 * spd,
        tp=tp, fp=fp, fn=fn, tn=tn,
    )


def rank_subjects(scores: Mapping[str, float]) -> list[str]:
    """Descending by score, ties by subject_id ascending."""
    return sorted(scores, key=lambda s: (-scores[s], s))


def dcg(relevances: Sequence[int], k: int) -> float:
    return sum(rel / math.log2(i + 2) for i, rel in enumerate(relevances[:k]))


def ndcg_at(ranked_rel: Sequence[int], k: int) -> float:
    ideal = dcg(sorted(ranked_rel, reverse=True), k)
    return dcg(ranked_rel, k) / ideal if ideal > 0 else 0.0


@dataclass
class RankingMetrics:
    p_at_10: float
    ndcg_at_10: float
    ndcg_at_100: float
    warnings: list[str] = field(default_factory=list)


def ranking_metrics(scores: Mapping[str, float], gold: Mapping[str, str], checkpoint: int | None = None
                    ) -> RankingMetrics:
    missing = set(scores) - set(gold)
    if missing:
        raise MetricsError(f"scores for unknown subjects: {sorted(missing)[:5]}")
    ranked = rank_subjects(scores)
    rel = [1 if gold[s] == POSITIVE else 0 for s in ranked]
    notes = []
    if len(ranked) < 10:
        msg = f"only {len(ranked)} users ranked at checkpoint {checkpoint}; P@10 still divides by 10"
        warnings.warn(msg, SmallCohortWarning, stacklevel=2)
        notes.append(msg)
    return RankingMetrics(
        p_at_10=sum(rel[:10]) / 10,
        ndcg_at_10=ndcg_at(rel, 10),
        ndcg_at_100=ndcg_at(rel, 100),
        warnings=notes,
    )
