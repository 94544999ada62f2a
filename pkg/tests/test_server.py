import json
import math
import threading
import urllib.error
import urllib.request

import pytest

from erdkit.corpus import Corpus, make_user
from erdkit.evaluation import RunLog
from erdkit.server import AuthError, MockServer, ProtocolError, RejectedSubmission, ServerError, serve_in_thread


def corpus3():
    return Corpus("c3", (
        make_user("a", "positive", [("", f"post {i}") for i in range(12)]),
        make_user("b", "negative", [("", f"post {i}") for i in range(10)]),
        make_user("c", "negative", [("", f"post {i}") for i in range(3)]),
    ))


def answer_all(server, token, decide=lambda sid, r: 0, score=lambda sid, r: 0.5):
    while True:
        w = server.get_writings(token)
        if w["end_of_stream"]:
            return w["round"]
        r = w["round"]
        server.submit_decisions(token, [{"subject_id": it["subject_id"], "decision": decide(it["subject_id"], r),
                                         "score": score(it["subject_id"], r)} for it in w["items"]])


@pytest.fixture
def server(tmp_path):
    return MockServer(corpus3(), state_dir=tmp_path / "state")


def test_register_and_duplicates(server):
    tok = server.register_team("alpha")
    assert server.get_writings(tok)["round"] == 1
    with pytest.raises(ProtocolError):
        server.register_team("alpha")
    with pytest.raises(ServerError):
        server.register_team("  ")


def test_unknown_token(server):
    with pytest.raises(AuthError):
        server.get_writings("nope")


def test_round_one_and_exhaustion(server):
    tok = server.register_team("t")
    w = server.get_writings(tok)
    assert [(it["subject_id"], it["seq"]) for it in w["items"]] == [("a", 0), ("b", 0), ("c", 0)]
    assert "label" not in json.dumps(w)
    for _ in range(10):
        w = server.get_writings(tok)
        server.submit_decisions(tok, [{"subject_id": it["subject_id"], "decision": 0, "score": 0.1}
                                      for it in w["items"]])
    w = server.get_writings(tok)
    assert w["round"] == 11 and [it["subject_id"] for it in w["items"]] == ["a"]


def test_writings_idempotent(server):
    tok = server.register_team("t")
    a = json.dumps(server.get_writings(tok))
    b = json.dumps(server.get_writings(tok))
    assert a == b


def test_rejections_do_not_advance(server):
    tok = server.register_team("t")
    good = [{"subject_id": s, "decision": 0, "score": 0.2} for s in "abc"]
    bad_sets = [
        good[:2],
        good + [{"subject_id": "zz", "decision": 0, "score": 0.1}],
        [dict(good[0], decision=2)] + good[1:],
        [dict(good[0], decision=True)] + good[1:],
        [dict(good[0], score=math.nan)] + good[1:],
        [dict(good[0], score="0.3")] + good[1:],
        good + [good[0]],
        "not a list",
    ]
    for bad in bad_sets:
        with pytest.raises(RejectedSubmission):
            server.submit_decisions(tok, bad)
        assert server.get_writings(tok)["round"] == 1
    assert server.session(tok).runlog.records == []
    server.submit_decisions(tok, good)
    assert server.get_writings(tok)["round"] == 2


def test_lockstep(server):
    tok = server.register_team("t")
    s = server.session(tok)
    for _ in range(4):
        w = server.get_writings(tok)
        server.submit_decisions(tok, [{"subject_id": it["subject_id"], "decision": 0, "score": 0.0}
                                      for it in w["items"]])
        assert s.submissions == s.current_round - 1


def test_verdict_frozen(server):
    tok = server.register_team("t")
    # flag "a" at round 12 (its last), keep sending 0 afterwards for nobody; flag b at 3 then send 0
    answer_all(server, tok, decide=lambda sid, r: int((sid == "a" and r == 12) or (sid == "b" and r == 3)))
    rep = server.finalize(tok)
    assert server.session(tok).frozen == {"a": 12, "b": 3}
    assert rep["latency_tp"] == 12 and rep["counts"]["fp"] == 1


def test_never_flag(server):
    tok = server.register_team("t")
    answer_all(server, tok)
    rep = server.finalize(tok)
    assert rep["r"] == 0
    # all-FN/TN cohort: only the one positive costs c_fn = 1
    assert rep["erde_5"] == rep["erde_50"] == pytest.approx(1 / 3)


def test_perfect_first_round(server):
    tok = server.register_team("t")
    answer_all(server, tok, decide=lambda sid, r: int(sid == "a"))
    rep = server.finalize(tok)
    assert rep["speed"] == 1.0 and rep["f1"] == 1.0 and rep["latency_tp"] == 1


def test_finalize_rules(server, tmp_path):
    tok = server.register_team("t")
    with pytest.raises(ProtocolError):
        server.finalize(tok, force=True)  # nothing answered
    w = server.get_writings(tok)
    server.submit_decisions(tok, [{"subject_id": it["subject_id"], "decision": 0, "score": 0.3}
                                  for it in w["items"]])
    with pytest.raises(ProtocolError):
        server.finalize(tok)
    rep = server.finalize(tok, force=True)
    assert server.finalize(tok) is rep
    with pytest.raises(ProtocolError):
        server.submit_decisions(tok, [])
    d = tmp_path / "state" / "t"
    assert {p.name for p in d.iterdir()} == {"runlog.jsonl", "report.json", "summary.json"}
    assert len(RunLog.load(d / "runlog.jsonl")) == 3
    assert json.loads((d / "report.json").read_text()) == rep


def test_sessions_isolated(server):
    toks = [server.register_team(n) for n in ("x", "y", "z")]
    rounds = {t: 0 for t in toks}
    # interleave: x runs three rounds, y one, z none
    for t, n in zip(toks, (3, 1, 0)):
        for _ in range(n):
            w = server.get_writings(t)
            server.submit_decisions(t, [{"subject_id": it["subject_id"], "decision": 1, "score": 0.9}
                                        for it in w["items"]])
            rounds[t] += 1
    assert [server.get_writings(t)["round"] for t in toks] == [4, 2, 1]
    assert server.session(toks[2]).frozen == {}
    assert set(server.session(toks[1]).frozen.values()) == {1}


def test_runlog_file_appended_per_round(server, tmp_path):
    tok = server.register_team("team/one")
    w = server.get_writings(tok)
    server.submit_decisions(tok, [{"subject_id": it["subject_id"], "decision": 0, "score": 0.25}
                                  for it in w["items"]])
    lines = (tmp_path / "state" / "team_one" / "runlog.jsonl").read_text().splitlines()
    assert [json.loads(x) for x in lines] == [{"round": 1, "subject_id": s, "decision": 0, "score": 0.25}
                                              for s in "abc"]


def test_replay_determinism(tmp_path):
    reports, logs = [], []
    for i in range(2):
        srv = MockServer(corpus3(), state_dir=tmp_path / f"s{i}")
        tok = srv.register_team("t")
        answer_all(srv, tok, decide=lambda sid, r: int(r >= 4 and sid != "c"), score=lambda sid, r: r / 20)
        reports.append(json.dumps(srv.finalize(tok)))
        logs.append((tmp_path / f"s{i}" / "t" / "runlog.jsonl").read_bytes())
    assert reports[0] == reports[1] and logs[0] == logs[1]


def _http(method, url, body=None):
    data = json.dumps(body).encode() if body is not None else None
    req = urllib.request.Request(url, data=data, method=method, headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=10) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


def test_http_endpoints(server):
    httpd, url = serve_in_thread(server)
    try:
        st, body = _http("POST", url + "/teams", {"name": "h"})
        assert st == 200 and set(body) == {"token"}
        tok = body["token"]
        st, w = _http("GET", f"{url}/teams/{tok}/writings")
        assert st == 200 and set(w) == {"round", "items", "end_of_stream"}
        assert set(w["items"][0]) == {"subject_id", "seq", "title", "content", "date"}
        st, _ = _http("POST", f"{url}/teams/{tok}/decisions", {"answers": []})
        assert st == 422
        st, ack = _http("POST", f"{url}/teams/{tok}/decisions",
                        {"answers": [{"subject_id": it["subject_id"], "decision": 0, "score": 0.5}
                                     for it in w["items"]]})
        assert st == 200 and ack == {"accepted": True, "round": 2}
        assert _http("POST", f"{url}/teams/{tok}/finalize", {"force": False})[0] == 409
        st, rep = _http("POST", f"{url}/teams/{tok}/finalize", {"force": True})
        assert st == 200 and "erde_50" in rep
        assert _http("GET", f"{url}/teams/bogus/writings")[0] == 404
        assert _http("GET", f"{url}/nothing")[0] == 404
        assert _http("POST", url + "/teams", {"name": "h"})[0] == 409
    finally:
        httpd.shutdown()
        httpd.server_close()


def test_concurrent_sessions_over_http(server):
    httpd, url = serve_in_thread(server)
    errors = []

    def play(name):
        try:
            tok = _http("POST", url + "/teams", {"name": name})[1]["token"]
            while True:
                w = _http("GET", f"{url}/teams/{tok}/writings")[1]
                if w["end_of_stream"]:
                    break
                _http("POST", f"{url}/teams/{tok}/decisions",
                      {"answers": [{"subject_id": it["subject_id"], "decision": 0, "score": 0.1}
                                   for it in w["items"]]})
            _http("POST", f"{url}/teams/{tok}/finalize", {})
        except Exception as exc:  # pragma: no cover - reported below
            errors.append(exc)

    threads = [threading.Thread(target=play, args=(f"team{i}",)) for i in range(4)]
    try:
        for t in threads:
            t.start()
        for t in threads:
            t.join(30)
    finally:
        httpd.shutdown()
        httpd.server_close()
    assert not errors
    assert all(s.report is not None for s in server._sessions.values())
