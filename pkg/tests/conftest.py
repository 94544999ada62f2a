import json

import pytest

from erdkit.corpus import Corpus, make_user
from erdkit.synth import generate_corpus


def write_jsonl(path, objs):
    path.write_text("".join(json.dumps(o) + "\n" for o in objs), encoding="utf-8")
    return path


@pytest.fixture
def tiny_corpus():
    users = [
        make_user("a", "positive", [("", "i skipped lunch again"), ("", "counting calories"), ("t", "binge")]),
        make_user("b", "negative", [("", "great match today"), ("", "rain all day")]),
        make_user("c", "negative", [("", "new phone")]),
    ]
    return Corpus("tiny", tuple(users))


@pytest.fixture(scope="session")
def small_synth():
    return generate_corpus(n_users=40, pos_rate=0.25, min_posts=10, max_posts=25, marker_strength=3.0, seed=7)


# criterion id -> (passed, detail); filled by the acceptance module
ACCEPTANCE_RESULTS: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=lambda k: int(k[2:])):
        ok, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}  {detail}")
