"""Early risk detection toolkit.

Replays labeled post histories round by round through a mock server, drives
scorers through alarm policies, trains a time-aware bag-of-words model and
computes ERDE, F_latency and ranking metrics.
"""
__version__ = "0.1.0"

from .corpus import Corpus, Post, UserHistory, WindowedInput, load_corpus, preprocess, window_at  # noqa: E402
from .metrics import ErdeConfig, UserOutcome, erde, latency_penalty  # noqa: E402
from .policy import PolicyConfig  # noqa: E402
from .predictor import TimeAwareModel, load_model, save_model  # noqa: E402

__all__ = [
    "Corpus", "Post", "UserHistory", "WindowedInput", "load_corpus", "preprocess", "window_at",
    "ErdeConfig", "UserOutcome", "erde", "latency_penalty", "PolicyConfig",
    "TimeAwareModel", "load_model", "save_model",
]
