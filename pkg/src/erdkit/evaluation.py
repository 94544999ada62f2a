"""Run logs and the report built from them.

The server's finalize and the offline ``eval`` command both go through
:func:`evaluate_runlog`, which is what keeps their reports identical.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import NEGATIVE, POSITIVE
from .metrics import (
    CHECKPOINTS,
    DEFAULT_PENALTY_SLOPE,
    DEFAULT_THETAS,
    ErdeConfig,
    MetricsError,
    SmallCohortWarning,
    UserOutcome,
    decision_metrics,
    ranking_metrics,
)

REPORT_KEYS = ("p", "r", "f1", "erde_5", "erde_50", "latency_tp", "speed", "f_latency")


class RunLogError(ValueError):
    pass


@dataclass(frozen=True)
class RunRecord:
    round: int
    subject_id: str
    decision: int
    score: float

    def to_json(self) -> str:
        return json.dumps({"round": self.round, "subject_id": self.subject_id,
                           "decision": self.decision, "score": self.score})


class RunLog:
    """Append-only list of per-round, per-subject answers."""

    def __init__(self, records: Iterable[RunRecord] = ()):
        self.records: list[RunRecord] = []
        for r in records:
            self.append(r)

    def append(self, rec: RunRecord) -> None:
        if self.records and rec.round < self.records[-1].round:
            raise RunLogError(f"record for round {rec.round} after round {self.records[-1].round}")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def last_round(self) -> int:
        return self.records[-1].round if self.records else 0

    def subjects(self) -> set[str]:
        return {r.subject_id for r in self.records}

    def first_alarms(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for r in self.records:
            if r.decision == 1 and r.subject_id not in out:
                out[r.subject_id] = r.round
        return out

    def posts_streamed(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for r in self.records:
            out[r.subject_id] = out.get(r.subject_id, 0) + 1
        return out

    def scores_at(self, round_: int) -> dict[str, float]:
        """Latest score per subject among records with round <= ``round_``."""
        out: dict[str, float] = {}
        for r in self.records:
            if r.round > round_:
                break
            out[r.subject_id] = r.score
        return out

    def summary(self) -> dict:
        return {"rounds": self.last_round, "first_alarm_round": dict(sorted(self.first_alarms().items()))}

    def dumps(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RunLog":
        recs = []
        with Path(path).open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    d = json.loads(line)
                    recs.append(RunRecord(int(d["round"]), str(d["subject_id"]), int(d["decision"]),
                                          float(d["score"])))
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise RunLogError(f"{path}: line {lineno}: bad record ({exc})") from None
        return cls(recs)


def outcomes_from_runlog(runlog: RunLog, gold: Mapping[str, str]) -> list[UserOutcome]:
    alarms = runlog.first_alarms()
    streamed = runlog.posts_streamed()
    out = []
    for sid in sorted(streamed):
        if sid in alarms:
            out.append(UserOutcome(sid, gold[sid], POSITIVE, alarms[sid]))
        else:
            out.append(UserOutcome(sid, gold[sid], NEGATIVE, streamed[sid]))
    return out


def check_subjects(runlog: RunLog, gold: Mapping[str, str]) -> None:
    logged = runlog.subjects()
    unknown = sorted(logged - set(gold))
    unseen = sorted(set(gold) - logged)
    if unknown or unseen:
        parts = []
        if unknown:
            parts.append(f"unknown subjects in run log: {', '.join(unknown[:20])}")
        if unseen:
            parts.append(f"corpus subjects missing from run log: {', '.join(unseen[:20])}")
        raise RunLogError("; ".join(parts))


def _num(x):
    if x is None:
        return None
    return float(x)


def evaluate_runlog(runlog: RunLog, gold: Mapping[str, str], thetas: Sequence[int] = DEFAULT_THETAS,
                    penalty_slope: float = DEFAULT_PENALTY_SLOPE,
                    checkpoints: Sequence[int] = CHECKPOINTS) -> dict:
    """Full report as a JSON-ready dict."""
    check_subjects(runlog, gold)
    outcomes = outcomes_from_runlog(runlog, gold)
    dm = decision_metrics(outcomes, [ErdeConfig(theta=t) for t in thetas], p=penalty_slope)
    report: dict = {"p": dm.precision, "r": dm.recall, "f1": dm.f1}
    for t in thetas:
        report[f"erde_{t}"] = dm.erde[t]
    report.update({"latency_tp": _num(dm.latency_tp), "speed": dm.speed, "f_latency": dm.f_latency})

    notes: list[str] = []
    last = runlog.last_round
    ranking = {}
    for cp in checkpoints:
        eff = min(cp, last)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SmallCohortWarning)
            rm = ranking_metrics(runlog.scores_at(eff), gold, checkpoint=cp)
        ranking[str(cp)] = {"p_at_10": rm.p_at_10, "ndcg_at_10": rm.ndcg_at_10, "ndcg_at_100": rm.ndcg_at_100,
                            "round": eff, "clipped": eff != cp}
        notes.extend(rm.warnings)
        if eff != cp:
            notes.append(f"checkpoint {cp} exceeds the {last} rounds played; scores from round {eff} reused")
    report["ranking"] = ranking
    report["counts"] = {"users": len(outcomes), "positives": dm.tp + dm.fn, "tp": dm.tp, "fp": dm.fp,
                        "fn": dm.fn, "tn": dm.tn, "rounds": last}
    report["warnings"] = notes
    return report


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=False) + "\n"


def _fmt(v, width=8, digits=3):
    if v is None:
        return "-".rjust(width)
    if isinstance(v, float) and not math.isfinite(v):
        return "nan".rjust(width)
    return f"{v:{width}.{digits}f}"


def render_report(report: dict, name: str = "run") -> str:
    """Aligned text tables: decision metrics then ranking metrics per checkpoint."""
    erde_keys = sorted((k for k in report if k.startswith("erde_")), key=lambda k: int(k.split("_")[1]))
    cols = ["p", "r", "f1", *erde_keys, "latency_tp", "speed", "f_latency"]
    heads = {"p": "P", "r": "R", "f1": "F1", "latency_tp": "latencyTP", "speed": "speed", "f_latency": "F_latency"}
    heads.update({k: "ERDE_" + k.split("_")[1] for k in erde_keys})
    width = max(10, len(name) + 2)
    lines = ["Decision-based metrics",
             "Model".ljust(width) + "".join(heads[c].rjust(11) for c in cols),
             name.ljust(width) + "".join(_fmt(report.get(c), 11) for c in cols),
             "",
             "Ranking-based metrics"]
    cps = list(report.get("ranking", {}))
    lines.append("".ljust(width) + "".join(f"{cp + ' post' + ('s' if cp != '1' else ''):>33}" for cp in cps))
    lines.append("Model".ljust(width) + "".join(f"{'P@10':>11}{'NDCG@10':>11}{'NDCG@100':>11}" for _ in cps))
    row = name.ljust(width)
    for cp in cps:
        r = report["ranking"][cp]
        row += _fmt(r["p_at_10"], 11, 2) + _fmt(r["ndcg_at_10"], 11, 2) + _fmt(r["ndcg_at_100"], 11, 2)
    lines.append(row)
    for note in report.get("warnings", []):
        lines.append(f"note: {note}")
    return "\n".join(lines) + "\n"
