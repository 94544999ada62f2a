"""Scorers mapping a windowed input to a positive-class probability.

Two scorers ship here: a fixed lexicon (no training, used by protocol tests)
and :class:`TimeAwareModel`, a bag-of-words logistic model with an explicit
normalized delay feature.
"""
from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .corpus import WindowedInput

FORMAT_VERSION = 1
DEFAULT_DELAY_CAP = 200
DEFAULT_DELAY_SCALE = 200.0

_TOKEN_RE = re.compile(r"\w+(?:'\w+)*")


class ModelFormatError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


def logistic(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@dataclass(frozen=True)
class RiskScore:
    subject_id: str
    p_pos: float
    delay: int


@dataclass
class TimeAwareModel:
    vocabulary: dict[str, int]
    weights: np.ndarray
    delay_scale: float = DEFAULT_DELAY_SCALE
    delay_cap: int = DEFAULT_DELAY_CAP

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (len(self.vocabulary) + 2,):
            raise ValueError(f"expected {len(self.vocabulary) + 2} weights, got {self.weights.shape}")
        if sorted(self.vocabulary.values()) != list(range(len(self.vocabulary))):
            raise ValueError("vocabulary indices must be dense 0..|V|-1")
        if self.delay_scale <= 0:
            raise ValueError("delay_scale must be positive")

    @classmethod
    def zeros(cls, vocabulary: Mapping[str, int] | Sequence[str], **kw) -> "TimeAwareModel":
        if not isinstance(vocabulary, Mapping):
            vocabulary = {tok: i for i, tok in enumerate(vocabulary)}
        return cls(dict(vocabulary), np.zeros(len(vocabulary) + 2), **kw)

    @property
    def n_features(self) -> int:
        return len(self.vocabulary) + 2

    @property
    def bias_index(self) -> int:
        return len(self.vocabulary)

    @property
    def delay_index(self) -> int:
        return len(self.vocabulary) + 1

    def copy(self) -> "TimeAwareModel":
        return TimeAwareModel(dict(self.vocabulary), self.weights.copy(), self.delay_scale, self.delay_cap)

    def __eq__(self, other):
        if not isinstance(other, TimeAwareModel):
            return NotImplemented
        return (self.vocabulary == other.vocabulary
                and np.array_equal(self.weights, other.weights)
                and self.delay_scale == other.delay_scale
                and self.delay_cap == other.delay_cap)

    def __call__(self, inp: WindowedInput) -> RiskScore:
        return score(self, inp)


def build_vocabulary(texts: Iterable[str], min_count: int = 2) -> dict[str, int]:
    """Tokens seen at least ``min_count`` times, indexed in sorted order."""
    counts = Counter(tok for text in texts for tok in tokenize(text))
    kept = sorted(tok for tok, c in counts.items() if c >= min_count)
    return {tok: i for i, tok in enumerate(kept)}


def featurize(inp: WindowedInput, model: TimeAwareModel) -> dict[int, float]:
    """Sparse feature vector as ``{index: value}``."""
    counts = Counter(model.vocabulary[t] for t in tokenize(inp.text) if t in model.vocabulary)
    norm = math.sqrt(sum(c * c for c in counts.values()))
    feats = {i: c / norm for i, c in sorted(counts.items())} if norm else {}
    feats[model.bias_index] = 1.0
    feats[model.delay_index] = min(inp.delay, model.delay_cap) / model.delay_scale
    return feats


@dataclass
class FeatureBatch:
    """CSR rows for a list of windows (one row per input)."""
    subject_ids: list[str]
    delays: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    n_cols: int

    @property
    def n_rows(self) -> int:
        return len(self.subject_ids)

    def dense(self) -> np.ndarray:
        out = np.zeros((self.n_rows, self.n_cols))
        for r in range(self.n_rows):
            sl = slice(self.indptr[r], self.indptr[r + 1])
            out[r, self.indices[sl]] = self.data[sl]
        return out

    def logits(self, weights: np.ndarray) -> np.ndarray:
        return kernels.csr_matvec(self.indptr, self.indices, self.data, weights)

    def backprop(self, coef: np.ndarray) -> np.ndarray:
        return kernels.csr_rmatvec(self.indptr, self.indices, self.data, coef, self.n_cols)

    def active_columns(self) -> np.ndarray:
        return np.unique(self.indices)

    def take(self, rows: Sequence[int]) -> "FeatureBatch":
        return stack_features([self.row(r) for r in rows], self.n_cols)

    def row(self, r: int) -> tuple[str, int, dict[int, float]]:
        sl = slice(self.indptr[r], self.indptr[r + 1])
        return (self.subject_ids[r], int(self.delays[r]),
                dict(zip(self.indices[sl].tolist(), self.data[sl].tolist())))


def stack_features(rows: Sequence[tuple[str, int, dict[int, float]]], n_cols: int) -> FeatureBatch:
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for _, _, feats in rows:
        indices.extend(feats.keys())
        data.extend(feats.values())
        indptr.append(len(indices))
    return FeatureBatch(
        subject_ids=[r[0] for r in rows],
        delays=np.array([r[1] for r in rows], dtype=np.int64),
        indptr=np.array(indptr, dtype=np.int64),
        indices=np.array(indices, dtype=np.int32),
        data=np.array(data, dtype=np.float64),
        n_cols=n_cols,
    )


def featurize_batch(inputs: Sequence[WindowedInput], model: TimeAwareModel) -> FeatureBatch:
    return stack_features([(i.subject_id, i.delay, featurize(i, model)) for i in inputs], model.n_features)


def score(model: TimeAwareModel, inp: WindowedInput) -> RiskScore:
    z = sum(model.weights[i] * v for i, v in featurize(inp, model).items())
    return RiskScore(inp.subject_id, logistic(float(z)), inp.delay)


def score_batch(model: TimeAwareModel, batch: FeatureBatch) -> np.ndarray:
    return kernels.sigmoid(batch.logits(model.weights))


def lexicon_score(lexicon: Mapping[str, float], inp: WindowedInput) -> RiskScore:
    if not lexicon:
        raise ValueError("lexicon must be nonempty")
    z = sum(lexicon.get(tok, 0.0) for tok in tokenize(inp.text))
    return RiskScore(inp.subject_id, logistic(z), inp.delay)


@dataclass
class LexiconScorer:
    lexicon: dict[str, float] = field(default_factory=dict)

    def __call__(self, inp: WindowedInput) -> RiskScore:
        return lexicon_score(self.lexicon, inp)


def load_lexicon(path) -> LexiconScorer:
    with Path(path).open(encoding="utf-8") as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict) or not obj:
        raise ValueError(f"{path}: lexicon must be a nonempty JSON object token -> weight")
    return LexiconScorer({str(k): float(v) for k, v in obj.items()})


def save_model(model: TimeAwareModel, path) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "vocabulary": model.vocabulary,
        "weights": model.weights.tolist(),
        "delay_scale": model.delay_scale,
        "delay_cap": model.delay_cap,
    }
    Path(path).write_text(json.dumps(doc, ensure_ascii=False), encoding="utf-8")


def load_model(path) -> TimeAwareModel:
    raw = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: corrupt model file ({exc.msg})") from None
    if not isinstance(doc, dict):
        raise ModelFormatError(f"{path}: corrupt model file")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: format_version {version!r} unsupported (expected {FORMAT_VERSION})")
    try:
        weights = np.array(doc["weights"], dtype=np.float64)
        model = TimeAwareModel(dict(doc["vocabulary"]), weights, float(doc["delay_scale"]), int(doc["delay_cap"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: corrupt model file ({exc})") from None
    if not np.all(np.isfinite(model.weights)):
        raise ModelFormatError(f"{path}: non-finite weights")
    return model


def load_scorer(model: str | None = None, lexicon: str | None = None):
    """Scorer callable from a model or lexicon path (exactly one)."""
    if bool(model) == bool(lexicon):
        raise ValueError("give exactly one of a model file or a lexicon file")
    return load_model(model) if model else load_lexicon(lexicon)
