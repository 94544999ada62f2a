"""Time-aware training of :class:`TimeAwareModel`.

Each epoch walks the block-window delay schedule. At every delay the users
still under analysis are scored, the latency-penalized surrogate loss is
computed, one gradient step is taken, and users whose probability reached
``tau_act`` leave the active set until the next epoch.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .corpus import (
    BLOCK,
    NEGATIVE,
    POSITIVE,
    Corpus,
    delay_schedule,
    split_train_valid,
    truncate_histories,
    window_at,
)
from .metrics import ErdeConfig, UserOutcome, erde
from .predictor import FeatureBatch, TimeAwareModel, build_vocabulary, featurize, stack_features

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class LossConfig:
    theta: float = 50.0
    lam: float = 1.0
    c_fp_train: float = 1.0
    tau_act: float = 0.7

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not 0 < self.tau_act < 1:
            raise ValueError("tau_act must be in (0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    theta: float = 50.0
    lam: float = 1.0
    c_fp_train: float | None = None  # None: share of positives in the training split
    tau_act: float = 0.7
    window: int = 10
    lr: float = 120.0
    epochs: int = 10
    max_posts: int = 200
    split_ratio: float = 0.8
    seed: int = 0
    selection_weight: float = 1.0
    valid_threshold: float = 0.7
    include_titles: bool = True
    min_token_count: int = 2
    prior_bias: bool = True

    def loss(self, pos_share: float = 1.0) -> LossConfig:
        c_fp = pos_share if self.c_fp_train is None else self.c_fp_train
        return LossConfig(self.theta, self.lam, c_fp, self.tau_act)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


def _lc(t, theta: float):
    """Lateness factor ``1 - 1/(1 + exp(t - theta))``; ``t`` may be an array."""
    x = np.asarray(t, dtype=np.float64) - theta
    out = kernels.sigmoid(np.atleast_1d(x))
    return out if x.ndim else float(out[0])


def surrogate_loss(p, y, t, cfg: LossConfig):
    """Loss and its gradient with respect to the probabilities ``p``.

    Per user: cross-entropy plus ``lam * (y*lc(t)*(1-p) + (1-y)*c_fp_train*p)``,
    averaged over users. ``t`` is the delay, scalar or one per user.
    """
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if p.size == 0:
        raise ValueError("empty active set")
    if np.any((p <= 0) | (p >= 1)):
        raise ValueError("probabilities must lie strictly inside (0, 1)")
    n = p.size
    lc = _lc(t, cfg.theta)
    ce = -(y * np.log(p) + (1 - y) * np.log1p(-p))
    pen = y * lc * (1 - p) + (1 - y) * cfg.c_fp_train * p
    loss = float(np.sum(ce + cfg.lam * pen) / n)
    grad = (-y / p + (1 - y) / (1 - p) + cfg.lam * (-y * lc + (1 - y) * cfg.c_fp_train)) / n
    return loss, grad


def surrogate_loss_logits(z, y, t, cfg: LossConfig):
    """Same objective parametrized by logits; returns (loss, dloss/dz, p).

    Cross-entropy goes through softplus so saturated logits stay finite.
    """
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if z.size == 0:
        raise ValueError("empty active set")
    n = z.size
    lc = _lc(t, cfg.theta)
    p = kernels.sigmoid(z)
    ce = kernels.softplus(z) - y * z
    pen = y * lc * (1 - p) + (1 - y) * cfg.c_fp_train * p
    loss = float(np.sum(ce + cfg.lam * pen) / n)
    dz = ((p - y) + cfg.lam * (-y * lc + (1 - y) * cfg.c_fp_train) * p * (1 - p)) / n
    return loss, dz, p


def batch_loss(weights: np.ndarray, batch: FeatureBatch, y, t, cfg: LossConfig):
    """Loss and weight gradient for one delay step."""
    loss, dz, p = surrogate_loss_logits(batch.logits(weights), y, t, cfg)
    return loss, batch.backprop(dz), p


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid_loss: float
    valid_accuracy: float
    valid_erde: float
    valid_erde_50: float
    steps: int

    def objective(self, weight: float = 1.0) -> float:
        return self.valid_erde_50 + weight * (1.0 - self.valid_accuracy)


@dataclass
class TrainState:
    model: TimeAwareModel
    epoch: int = 0
    active_set: set[str] = field(default_factory=set)
    history: list[EpochRecord] = field(default_factory=list)


def step_of(delay: int, window: int) -> int:
    """Block end at which a window ending at ``delay`` is processed (partial windows join the next block)."""
    return -(-delay // window) * window


class WindowCache:
    """Featurized block windows grouped by training step; vocabulary is fixed during training.

    ``schedule`` maps each step (a multiple of the window) to the users with a
    window there; a user's short final window keeps its own delay value.
    """

    def __init__(self, corpus: Corpus, model: TimeAwareModel, window: int, include_titles: bool = True):
        self.window = window
        self.n_cols = model.n_features
        self.labels = {u.subject_id: 1.0 if u.label == POSITIVE else 0.0 for u in corpus.users}
        self.lengths = {u.subject_id: len(u.posts) for u in corpus.users}
        self.order = [u.subject_id for u in corpus.users]
        self.schedule: dict[int, list[str]] = {}
        self._rows: dict[tuple[str, int], tuple[str, int, dict]] = {}
        for u in corpus.users:
            for d in delay_schedule(len(u.posts), window):
                step = step_of(d, window)
                self.schedule.setdefault(step, []).append(u.subject_id)
                w = window_at(u, d, window, BLOCK, include_titles)
                self._rows[(u.subject_id, step)] = (u.subject_id, d, featurize(w, model))

    @property
    def steps(self) -> list[int]:
        return sorted(self.schedule)

    def batch(self, step: int, subjects: Sequence[str]) -> FeatureBatch:
        return stack_features([self._rows[(s, step)] for s in subjects], self.n_cols)


def _as_cache(data, model, window):
    if isinstance(data, WindowCache):
        return data
    return WindowCache(data, model, window)


def train_epoch(state: TrainState, data: WindowCache | Corpus, lr: float, cfg: LossConfig,
                window: int = 10) -> float:
    """One pass over the delay schedule; returns the mean per-delay loss."""
    model = state.model
    cache = _as_cache(data, model, window)
    state.active_set = set(cache.order)
    losses = []
    for t in cache.steps:
        subjects = [s for s in cache.schedule[t] if s in state.active_set]
        if not subjects:
            if not state.active_set:
                break
            continue
        batch = cache.batch(t, subjects)
        y = np.array([cache.labels[s] for s in subjects])
        loss, grad, p = batch_loss(model.weights, batch, y, batch.delays, cfg)
        if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise TrainingDiverged(f"epoch {state.epoch} delay {t}: non-finite loss {loss} "
                                   f"over {len(subjects)} users; |w|max={np.abs(model.weights).max():.3g}")
        losses.append(loss)
        model.weights = model.weights - lr * grad
        for s, ps in zip(subjects, p):
            if ps >= cfg.tau_act:
                state.active_set.discard(s)
        # users whose history ended at this delay are finished as well
        for s, d in zip(subjects, batch.delays):
            if cache.lengths[s] <= d:
                state.active_set.discard(s)
    state.epoch += 1
    return float(np.mean(losses)) if losses else float("nan")


def validate_epoch(model: TimeAwareModel, data: WindowCache | Corpus, cfg: LossConfig, threshold: float = 0.7,
                   erde_theta: float | None = None, window: int = 10):
    """(loss, accuracy, ERDE_theta) with no parameter updates.

    A user is predicted positive at the first scheduled delay whose probability
    exceeds ``threshold``; otherwise negative at its full history length.
    """
    cache = _as_cache(data, model, window)
    if not cache.order:
        raise ValueError("empty validation set")
    outcomes, losses = _validation_pass(model, cache, cfg, threshold)
    theta = cfg.theta if erde_theta is None else erde_theta
    correct = sum(o.gold == o.predicted for o in outcomes.values())
    acc = correct / len(outcomes)
    return (float(np.mean(losses)) if losses else float("nan"), acc,
            erde(list(outcomes.values()), ErdeConfig(theta=int(round(theta)))))


def _validation_pass(model, cache, cfg, threshold):
    active = set(cache.order)
    fired: dict[str, int] = {}
    losses = []
    for t in cache.steps:
        subjects = [s for s in cache.schedule[t] if s in active]
        if not subjects:
            continue
        batch = cache.batch(t, subjects)
        y = np.array([cache.labels[s] for s in subjects])
        loss, _, p = surrogate_loss_logits(batch.logits(model.weights), y, batch.delays, cfg)
        losses.append(loss)
        for s, ps, d in zip(subjects, p, batch.delays):
            if ps > threshold:
                fired[s] = int(d)
                active.discard(s)
    outcomes = {}
    for s in cache.order:
        gold = POSITIVE if cache.labels[s] else NEGATIVE
        if s in fired:
            outcomes[s] = UserOutcome(s, gold, POSITIVE, fired[s])
        else:
            outcomes[s] = UserOutcome(s, gold, NEGATIVE, cache.lengths[s])
    return outcomes, losses


def validation_outcomes(model, cache, cfg, threshold=0.7) -> list[UserOutcome]:
    return list(_validation_pass(model, cache, cfg, threshold)[0].values())


def select_best(history: Sequence[EpochRecord], weight: float = 1.0) -> int:
    if not history:
        raise ValueError("no epochs")
    best, best_val = 0, history[0].objective(weight)
    for i, rec in enumerate(history[1:], start=1):
        v = rec.objective(weight)
        if v < best_val:
            best, best_val = i, v
    return best


def gradient_check(model: TimeAwareModel, batch: FeatureBatch, y, t, cfg: LossConfig,
                   epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference weight gradients."""
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError("epsilon must be in [1e-7, 1e-3]")
    w = model.weights.copy()
    if t is None:
        t = batch.delays
    _, analytic, _ = batch_loss(w, batch, y, t, cfg)
    worst = 0.0
    for j in batch.active_columns():
        wp = w.copy()
        wp[j] += epsilon
        wm = w.copy()
        wm[j] -= epsilon
        numeric = (batch_loss(wp, batch, y, t, cfg)[0] - batch_loss(wm, batch, y, t, cfg)[0]) / (2 * epsilon)
        a = analytic[j]
        denom = max(abs(a), abs(numeric))
        if denom == 0:
            continue
        worst = max(worst, abs(a - numeric) / denom)
    return worst


@dataclass
class FitResult:
    model: TimeAwareModel
    best_epoch: int
    history: list[EpochRecord]
    train: Corpus
    valid: Corpus
    snapshots: list[TimeAwareModel] = field(default_factory=list, repr=False)


def prepare_corpus(corpus: Corpus, cfg: TrainConfig) -> tuple[Corpus, Corpus]:
    return split_train_valid(truncate_histories(corpus, cfg.max_posts), cfg.split_ratio, cfg.seed)


def fit(corpus: Corpus, cfg: TrainConfig, on_epoch=None) -> FitResult:
    """Split, build the vocabulary, train ``cfg.epochs`` epochs and keep the selected one.

    ``on_epoch`` is called with each :class:`EpochRecord`. If training
    diverges the exception carries the partial history as ``.history``.
    """
    train, valid = prepare_corpus(corpus, cfg)
    texts = (window_at(u, d, cfg.window, BLOCK, cfg.include_titles).text
             for u in train.users for d in delay_schedule(len(u.posts), cfg.window))
    vocab = build_vocabulary(texts, cfg.min_token_count)
    model = TimeAwareModel.zeros(vocab, delay_scale=float(cfg.max_posts), delay_cap=cfg.max_posts)
    n_pos = sum(u.label == POSITIVE for u in train.users)
    if cfg.prior_bias and 0 < n_pos < len(train.users):
        model.weights[model.bias_index] = math.log(n_pos / (len(train.users) - n_pos))
    lcfg = cfg.loss(n_pos / len(train.users))
    train_cache = WindowCache(train, model, cfg.window, cfg.include_titles)
    valid_cache = WindowCache(valid, model, cfg.window, cfg.include_titles)
    state = TrainState(model)
    snapshots = []
    for epoch in range(cfg.epochs):
        try:
            train_loss = train_epoch(state, train_cache, cfg.lr, lcfg)
        except TrainingDiverged as exc:
            exc.history = state.history
            raise
        v_loss, v_acc, v_erde = validate_epoch(state.model, valid_cache, lcfg, cfg.valid_threshold)
        v_erde_50 = v_erde if round(cfg.theta) == 50 else validate_epoch(
            state.model, valid_cache, lcfg, cfg.valid_threshold, erde_theta=50)[2]
        rec = EpochRecord(epoch, train_loss, v_loss, v_acc, v_erde, v_erde_50, len(train_cache.steps))
        state.history.append(rec)
        snapshots.append(state.model.copy())
        log.info("epoch %d train_loss %.4f valid_loss %.4f acc %.3f erde %.4f",
                 epoch, train_loss, v_loss, v_acc, v_erde)
        if on_epoch:
            on_epoch(rec)
    best = select_best(state.history, cfg.selection_weight)
    return FitResult(snapshots[best], best, state.history, train, valid, snapshots)


def write_history(history: Sequence[EpochRecord], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in history:
            fh.write(json.dumps(asdict(rec)) + "\n")


def read_history(path) -> list[EpochRecord]:
    with Path(path).open(encoding="utf-8") as fh:
        return [EpochRecord(**json.loads(line)) for line in fh if line.strip()]
