"""Evaluation client: fetch a round, score sliding windows, apply the policy, answer.

The runner talks to a transport, either :class:`HttpTransport` for a remote
server or :class:`LocalTransport` wrapping an in-process
:class:`~erdkit.server.MockServer`. Progress can be persisted to a run-state
file after every answered round so an interrupted run resumes where it stopped.
"""
from __future__ import annotations

import json
import logging
import time
import urllib.error
import urllib.request
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .corpus import SLIDING, Post, WindowedInput, window_at
from .policy import PolicyConfig, PolicyState, decide, new_state
from .predictor import RiskScore

log = logging.getLogger(__name__)

Scorer = Callable[[WindowedInput], RiskScore]


class ClientError(RuntimeError):
    pass


class ProtocolRejected(ClientError):
    def __init__(self, status: int, message: str):
        super().__init__(f"server rejected request ({status}): {message}")
        self.status = status


class ResumeError(ClientError):
    pass


class HttpTransport:
    def __init__(self, base_url: str, timeout: float = 30.0, retries: int = 3, backoff: float = 0.2):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff

    @property
    def address(self) -> str:
        return self.base_url

    def _request(self, method: str, path: str, body: dict | None = None) -> dict:
        data = json.dumps(body).encode("utf-8") if body is not None else None
        last_exc = None
        for attempt in range(self.retries):
            req = urllib.request.Request(self.base_url + path, data=data, method=method,
                                         headers={"Content-Type": "application/json"})
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    return json.loads(resp.read())
            except urllib.error.HTTPError as exc:
                try:
                    msg = json.loads(exc.read()).get("error", exc.reason)
                except (ValueError, AttributeError):
                    msg = exc.reason
                raise ProtocolRejected(exc.code, str(msg)) from None
            except (urllib.error.URLError, ConnectionError, TimeoutError) as exc:
                last_exc = exc
                log.warning("%s %s failed (attempt %d/%d): %s", method, path, attempt + 1, self.retries, exc)
                if attempt + 1 < self.retries:
                    time.sleep(self.backoff * 2 ** attempt)
        raise ClientError(f"{method} {path}: transport failure after {self.retries} attempts: {last_exc}")

    def register(self, name: str) -> str:
        return self._request("POST", "/teams", {"name": name})["token"]

    def get_writings(self, token: str) -> dict:
        return self._request("GET", f"/teams/{token}/writings")

    def submit(self, token: str, answers: list[dict]) -> dict:
        return self._request("POST", f"/teams/{token}/decisions", {"answers": answers})

    def finalize(self, token: str, force: bool = False) -> dict:
        return self._request("POST", f"/teams/{token}/finalize", {"force": force})


class LocalTransport:
    """Direct calls into a MockServer, with server errors mapped like the HTTP transport."""

    address = "local"

    def __init__(self, server):
        self.server = server

    def _call(self, fn, *args):
        from .server import ServerError
        try:
            return fn(*args)
        except ServerError as exc:
            raise ProtocolRejected(int(exc.status), str(exc)) from None

    def register(self, name):
        return self._call(self.server.register_team, name)

    def get_writings(self, token):
        return json.loads(json.dumps(self._call(self.server.get_writings, token)))

    def submit(self, token, answers):
        return self._call(self.server.submit_decisions, token, answers)

    def finalize(self, token, force=False):
        return self._call(self.server.finalize, token, force)


@dataclass
class RunnerState:
    token: str
    server: str
    last_answered_round: int = 0
    policy: PolicyState = field(default_factory=PolicyState)
    buffers: dict[str, deque] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "server": self.server,
            "token": self.token,
            "last_answered_round": self.last_answered_round,
            "policy_state": self.policy.to_dict(),
            "buffers": {sid: [p.to_payload() for p in buf] for sid, buf in sorted(self.buffers.items())},
        }

    @classmethod
    def from_dict(cls, d: dict, window: int) -> "RunnerState":
        bufs = {sid: deque((Post(p["subject_id"], p["seq"], p["title"], p["content"], p["date"]) for p in posts),
                           maxlen=window)
                for sid, posts in d.get("buffers", {}).items()}
        return cls(token=d["token"], server=d["server"], last_answered_round=int(d["last_answered_round"]),
                   policy=PolicyState.from_dict(d["policy_state"]), buffers=bufs)

    def save(self, path) -> None:
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(json.dumps(self.to_dict()), encoding="utf-8")
        tmp.replace(path)


class Runner:
    def __init__(self, transport, scorer: Scorer, policy: PolicyConfig, window: int = 10,
                 include_titles: bool = True, state_path=None):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.transport = transport
        self.scorer = scorer
        self.policy = policy
        self.window = window
        self.include_titles = include_titles
        self.state_path = Path(state_path) if state_path else None
        self.state: RunnerState | None = None
        self.submitted: list[dict] = []

    def start(self, team: str) -> RunnerState:
        token = self.transport.register(team)
        self.state = RunnerState(token, self.transport.address, policy=new_state(self.policy))
        self._persist()
        return self.state

    def resume(self, state_path=None) -> RunnerState:
        """Reload a persisted run state and check it against the server's round counter."""
        path = Path(state_path) if state_path else self.state_path
        if path is None or not path.exists():
            raise ResumeError(f"no run state at {path}")
        self.state_path = path
        self.state = RunnerState.from_dict(json.loads(path.read_text(encoding="utf-8")), self.window)
        writings = self.transport.get_writings(self.state.token)
        if writings["round"] != self.state.last_answered_round + 1:
            raise ResumeError(f"state says round {self.state.last_answered_round} answered, "
                              f"server is at round {writings['round']}")
        return self.state

    def _persist(self) -> None:
        if self.state_path and self.state:
            self.state.save(self.state_path)

    def answer_round(self, writings: dict) -> list[dict]:
        st = self.state
        answers = []
        for item in writings["items"]:
            post = Post(item["subject_id"], item["seq"], item["title"], item["content"], item["date"])
            buf = st.buffers.setdefault(post.subject_id, deque(maxlen=self.window))
            buf.append(post)
            delay = post.seq + 1
            # buffer holds the last `window` posts; its sliding window at `delay` is all of it
            inp = window_at(list(buf), len(buf), self.window, SLIDING, self.include_titles)
            inp = WindowedInput(inp.subject_id, inp.text, delay)
            rs = self.scorer(inp)
            rs = RiskScore(post.subject_id, rs.p_pos, delay)
            decide(self.policy, st.policy, rs)
            answers.append({"subject_id": post.subject_id,
                            "decision": 1 if st.policy.has_fired(post.subject_id) else 0,
                            "score": float(rs.p_pos)})
        return answers

    def run(self, team: str | None = None, max_rounds: int | None = None) -> dict | None:
        """Play rounds until end of stream and return the final report.

        With ``max_rounds`` the loop stops early (state persisted) and returns None.
        """
        if self.state is None:
            if team is None:
                raise ClientError("call start()/resume() or pass a team name")
            self.start(team)
        st = self.state
        played = 0
        while True:
            writings = self.transport.get_writings(st.token)
            if writings["end_of_stream"]:
                break
            if max_rounds is not None and played >= max_rounds:
                return None
            if writings["round"] != st.last_answered_round + 1:
                raise ClientError(f"server round {writings['round']} does not follow {st.last_answered_round}")
            answers = self.answer_round(writings)
            self.transport.submit(st.token, answers)
            self.submitted.append({"round": writings["round"], "answers": answers})
            st.last_answered_round = writings["round"]
            played += 1
            self._persist()
        log.info("end of stream after round %d; finalizing", st.last_answered_round)
        return self.transport.finalize(st.token)
