"""Decision policies turning a per-subject score stream into a one-shot alarm."""
from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field

from .predictor import RiskScore

SIMPLE = "simple"
HISTORIC = "historic"


class Decision(str, enum.Enum):
    ALARM = "alarm"
    CONTINUE = "continue"


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class PolicyConfig:
    kind: str = SIMPLE
    threshold: float = 0.7
    min_delay: int = 10
    history_len: int = 0

    def __post_init__(self):
        if self.kind not in (SIMPLE, HISTORIC):
            raise PolicyError(f"unknown policy kind {self.kind!r}")
        if not 0 < self.threshold < 1:
            raise PolicyError("threshold must be in (0, 1)")
        if self.min_delay < 1:
            raise PolicyError("min_delay must be >= 1")
        if self.history_len < 0:
            raise PolicyError("history_len must be >= 0")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "threshold": self.threshold,
                "min_delay": self.min_delay, "history_len": self.history_len}

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyConfig":
        return cls(kind=d.get("kind", SIMPLE), threshold=float(d.get("threshold", 0.7)),
                   min_delay=int(d.get("min_delay", 10)), history_len=int(d.get("history_len", 0)))


@dataclass
class PolicyState:
    history_len: int = 0
    recent: dict[str, deque] = field(default_factory=dict)
    last_delay: dict[str, int] = field(default_factory=dict)
    fired: dict[str, int] = field(default_factory=dict)

    def has_fired(self, subject_id: str) -> bool:
        return subject_id in self.fired

    def _push(self, score: RiskScore, strict_order: bool) -> deque:
        sid = score.subject_id
        prev = self.last_delay.get(sid)
        if strict_order and prev is not None and score.delay <= prev:
            raise PolicyError(f"{sid}: delay {score.delay} after {prev}")
        self.last_delay[sid] = score.delay
        ring = self.recent.setdefault(sid, deque(maxlen=self.history_len + 1))
        ring.append(score.p_pos)
        return ring

    def to_dict(self) -> dict:
        return {
            "history_len": self.history_len,
            "recent": {k: list(v) for k, v in sorted(self.recent.items())},
            "last_delay": dict(sorted(self.last_delay.items())),
            "fired": dict(sorted(self.fired.items())),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyState":
        m = int(d["history_len"])
        return cls(
            history_len=m,
            recent={k: deque(v, maxlen=m + 1) for k, v in d["recent"].items()},
            last_delay={k: int(v) for k, v in d["last_delay"].items()},
            fired={k: int(v) for k, v in d["fired"].items()},
        )


def new_state(cfg: PolicyConfig) -> PolicyState:
    return PolicyState(history_len=cfg.history_len if cfg.kind == HISTORIC else 0)


def simple_rule(cfg: PolicyConfig, state: PolicyState, score: RiskScore) -> Decision:
    state._push(score, strict_order=False)
    if state.has_fired(score.subject_id):
        return Decision.CONTINUE
    if score.delay >= cfg.min_delay and score.p_pos > cfg.threshold:
        state.fired[score.subject_id] = score.delay
        return Decision.ALARM
    return Decision.CONTINUE


def historic_rule(cfg: PolicyConfig, state: PolicyState, score: RiskScore) -> Decision:
    """Alarm once the current score and the ``history_len`` before it all exceed the threshold."""
    ring = state._push(score, strict_order=True)
    if state.has_fired(score.subject_id):
        return Decision.CONTINUE
    if score.delay < cfg.min_delay or len(ring) < cfg.history_len + 1:
        return Decision.CONTINUE
    if all(p > cfg.threshold for p in ring):
        state.fired[score.subject_id] = score.delay
        return Decision.ALARM
    return Decision.CONTINUE


def decide(cfg: PolicyConfig, state: PolicyState, score: RiskScore) -> Decision:
    rule = historic_rule if cfg.kind == HISTORIC else simple_rule
    return rule(cfg, state, score)
