"""Mock early-risk server.

A :class:`MockServer` holds one corpus and any number of team sessions. Each
round hands out the next post of every subject whose stream is not exhausted
and waits for one answer per subject before advancing. Gold labels never
leave the server; they are only used by :meth:`MockServer.finalize`.

:func:`make_http_server` exposes the same object over HTTP/JSON::

    POST /teams                     {"name"}            -> {"token"}
    GET  /teams/{token}/writings                        -> {"round", "items", "end_of_stream"}
    POST /teams/{token}/decisions   {"answers": [...]}  -> {"accepted": true, "round"}
    POST /teams/{token}/finalize    {"force": bool}     -> report
"""
from __future__ import annotations

import json
import logging
import math
import re
import secrets
import threading
from dataclasses import dataclass, field
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Sequence

from .corpus import Corpus
from .evaluation import RunLog, RunRecord, dumps_report, evaluate_runlog
from .metrics import CHECKPOINTS, DEFAULT_PENALTY_SLOPE, DEFAULT_THETAS

log = logging.getLogger(__name__)


class ServerError(Exception):
    status = HTTPStatus.BAD_REQUEST


class ProtocolError(ServerError):
    status = HTTPStatus.CONFLICT


class AuthError(ServerError):
    status = HTTPStatus.NOT_FOUND


class RejectedSubmission(ServerError):
    status = HTTPStatus.UNPROCESSABLE_ENTITY


@dataclass
class Session:
    name: str
    token: str
    current_round: int = 1
    submissions: int = 0
    frozen: dict[str, int] = field(default_factory=dict)
    runlog: RunLog = field(default_factory=RunLog)
    report: dict | None = None
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)


class MockServer:
    def __init__(self, corpus: Corpus, state_dir=None, thetas: Sequence[int] = DEFAULT_THETAS,
                 penalty_slope: float = DEFAULT_PENALTY_SLOPE, checkpoints: Sequence[int] = CHECKPOINTS,
                 token_factory=None):
        self.corpus = corpus
        self.state_dir = Path(state_dir) if state_dir else None
        self.thetas = tuple(thetas)
        self.penalty_slope = penalty_slope
        self.checkpoints = tuple(checkpoints)
        self._gold = corpus.gold()
        self._max_round = corpus.max_posts
        self._sessions: dict[str, Session] = {}
        self._names: set[str] = set()
        self._registry_lock = threading.Lock()
        self._token_factory = token_factory or (lambda name: secrets.token_hex(16))

    @property
    def max_round(self) -> int:
        return self._max_round

    def register_team(self, name: str) -> str:
        if not isinstance(name, str) or not name.strip():
            raise ServerError("team name must be a nonempty string")
        with self._registry_lock:
            if name in self._names:
                raise ProtocolError(f"team {name!r} already registered")
            token = self._token_factory(name)
            if token in self._sessions:
                raise ServerError("token collision")
            self._names.add(name)
            self._sessions[token] = Session(name, token)
        if self.state_dir:
            (self._team_dir(self._sessions[token]) / "runlog.jsonl").write_text("", encoding="utf-8")
        log.info("registered team %s", name)
        return token

    def session(self, token: str) -> Session:
        try:
            return self._sessions[token]
        except KeyError:
            raise AuthError("unknown token") from None

    def _items(self, r: int) -> list[dict]:
        return [u.posts[r - 1].to_payload() for u in self.corpus.users if len(u.posts) >= r]

    def get_writings(self, token: str) -> dict:
        s = self.session(token)
        with s.lock:
            if s.submissions != s.current_round - 1:
                raise ProtocolError(f"round {s.current_round - 1} not answered")
            r = s.current_round
        items = self._items(r)
        return {"round": r, "items": items, "end_of_stream": not items}

    def submit_decisions(self, token: str, answers) -> dict:
        s = self.session(token)
        with s.lock:
            if s.report is not None:
                raise ProtocolError("session already finalized")
            r = s.current_round
            expected = [u.subject_id for u in self.corpus.users if len(u.posts) >= r]
            if not expected:
                raise ProtocolError("all streams exhausted; nothing to answer")
            records = self._validate(answers, expected, r)
            for rec in records:
                s.runlog.append(rec)
                if rec.decision == 1 and rec.subject_id not in s.frozen:
                    s.frozen[rec.subject_id] = r
            s.submissions += 1
            s.current_round += 1
            if self.state_dir:
                self._append_runlog(s, records)
            return {"accepted": True, "round": s.current_round}

    @staticmethod
    def _validate(answers, expected: list[str], r: int) -> list[RunRecord]:
        if not isinstance(answers, list):
            raise RejectedSubmission("answers must be a list")
        by_id = {}
        for a in answers:
            if not isinstance(a, dict) or not {"subject_id", "decision", "score"} <= a.keys():
                raise RejectedSubmission("each answer needs subject_id, decision and score")
            sid = a["subject_id"]
            if sid in by_id:
                raise RejectedSubmission(f"duplicate answer for {sid!r}")
            d = a["decision"]
            if isinstance(d, bool) or d not in (0, 1):
                raise RejectedSubmission(f"{sid}: decision must be 0 or 1")
            sc = a["score"]
            if isinstance(sc, bool) or not isinstance(sc, (int, float)) or not math.isfinite(sc):
                raise RejectedSubmission(f"{sid}: score must be a finite number")
            by_id[sid] = (int(d), float(sc))
        missing = [x for x in expected if x not in by_id]
        extra = sorted(set(by_id) - set(expected))
        if missing or extra:
            raise RejectedSubmission(f"round {r}: missing {missing[:10]} extra {extra[:10]}")
        return [RunRecord(r, sid, *by_id[sid]) for sid in expected]

    def _team_dir(self, s: Session) -> Path:
        safe = re.sub(r"[^A-Za-z0-9_.-]", "_", s.name)
        d = self.state_dir / safe
        d.mkdir(parents=True, exist_ok=True)
        return d

    def _append_runlog(self, s: Session, records: list[RunRecord]) -> None:
        with (self._team_dir(s) / "runlog.jsonl").open("a", encoding="utf-8") as fh:
            fh.write("".join(rec.to_json() + "\n" for rec in records))

    def finalize(self, token: str, force: bool = False) -> dict:
        s = self.session(token)
        with s.lock:
            if s.report is not None:
                return s.report
            done = not self._items(s.current_round)
            if not done and not force:
                raise ProtocolError(f"streams not exhausted at round {s.current_round}; pass force to finalize early")
            if not s.runlog.records:
                raise ProtocolError("no rounds answered")
            gold = {sid: self._gold[sid] for sid in s.runlog.subjects()}
            report = evaluate_runlog(s.runlog, gold, self.thetas, self.penalty_slope, self.checkpoints)
            s.report = report
            if self.state_dir:
                d = self._team_dir(s)
                s.runlog.save(d / "runlog.jsonl")
                (d / "report.json").write_text(dumps_report(report), encoding="utf-8")
                (d / "summary.json").write_text(json.dumps(s.runlog.summary(), indent=2) + "\n", encoding="utf-8")
            return report


def _handler_for(core: MockServer):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"
        server_version = "erdkit-mock/0.1"

        def log_message(self, fmt, *args):
            log.debug("%s " + fmt, self.address_string(), *args)

        def _send(self, status, obj):
            body = json.dumps(obj).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _body(self):
            n = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(n) if n else b"{}"
            try:
                obj = json.loads(raw or b"{}")
            except json.JSONDecodeError:
                raise ServerError("request body is not valid JSON") from None
            if not isinstance(obj, dict):
                raise ServerError("request body must be a JSON object")
            return obj

        def _dispatch(self, method):
            parts = [p for p in self.path.split("?")[0].split("/") if p]
            try:
                if method == "POST" and parts == ["teams"]:
                    return self._send(HTTPStatus.OK, {"token": core.register_team(self._body().get("name"))})
                if len(parts) == 3 and parts[0] == "teams":
                    token, action = parts[1], parts[2]
                    if method == "GET" and action == "writings":
                        return self._send(HTTPStatus.OK, core.get_writings(token))
                    if method == "POST" and action == "decisions":
                        return self._send(HTTPStatus.OK, core.submit_decisions(token, self._body().get("answers")))
                    if method == "POST" and action == "finalize":
                        force = bool(self._body().get("force", False))
                        return self._send(HTTPStatus.OK, core.finalize(token, force))
                self._send(HTTPStatus.NOT_FOUND, {"error": f"no route {method} {self.path}"})
            except ServerError as exc:
                self._send(exc.status, {"error": str(exc), "kind": type(exc).__name__})

        def do_GET(self):
            self._dispatch("GET")

        def do_POST(self):
            self._dispatch("POST")

    return Handler


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = False


def make_http_server(core: MockServer, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    """Bound (not yet serving) HTTP server; ``port=0`` picks a free port."""
    return _Server((host, port), _handler_for(core))


def serve_in_thread(core: MockServer, host: str = "127.0.0.1", port: int = 0):
    """Start serving in a daemon thread; returns ``(httpd, base_url)``. Call ``httpd.shutdown()`` to stop."""
    httpd = make_http_server(core, host, port)
    t = threading.Thread(target=httpd.serve_forever, name="erdkit-mock", daemon=True)
    t.start()
    h, p = httpd.server_address[:2]
    return httpd, f"http://{h}:{p}"
