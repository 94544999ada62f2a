import itertools
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from erdkit.corpus import (
    BLOCK,
    SLIDING,
    Corpus,
    CorpusError,
    delay_schedule,
    dump_corpus,
    load_corpus,
    make_user,
    preprocess,
    render_input,
    split_train_valid,
    truncate_histories,
    window_at,
    window_bounds,
)
from erdkit.synth import generate_corpus

from .conftest import write_jsonl


def _user_obj(sid, label, n):
    return {"subject_id": sid, "label": label,
            "posts": [{"title": "", "content": f"post {i}", "date": "2018-01-01"} for i in range(n)]}


class TestLoad:
    def test_counts(self, tmp_path):
        p = write_jsonl(tmp_path / "c.jsonl", [_user_obj("u1", "positive", 3), _user_obj("u2", "negative", 2)])
        c = load_corpus(p)
        assert (c.stats.total, c.stats.positives, c.stats.negatives) == (2, 1, 1)
        assert c.stats.posts_min == 2 and c.stats.posts_max == 3

    def test_erisk2018_test_shape(self, tmp_path):
        corpus = generate_corpus(n_users=320, pos_rate=0.128, min_posts=9, max_posts=12, seed=3)
        dump_corpus(corpus, tmp_path / "c.jsonl")
        c = load_corpus(tmp_path / "c.jsonl")
        assert (c.stats.total, c.stats.positives, c.stats.negatives) == (320, 41, 279)

    def test_duplicate_subject(self, tmp_path):
        p = write_jsonl(tmp_path / "c.jsonl", [_user_obj("u1", "positive", 1), _user_obj("u1", "negative", 1)])
        with pytest.raises(CorpusError, match="line 2.*duplicate"):
            load_corpus(p)

    def test_malformed_line_named(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text(json.dumps(_user_obj("u1", "positive", 1)) + "\n{not json\n")
        with pytest.raises(CorpusError, match="line 2"):
            load_corpus(p)

    def test_unknown_label(self, tmp_path):
        p = write_jsonl(tmp_path / "c.jsonl", [_user_obj("u1", "maybe", 1)])
        with pytest.raises(CorpusError, match="unknown label"):
            load_corpus(p)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text("")
        with pytest.raises(CorpusError, match="empty"):
            load_corpus(p)

    def test_round_trip(self, tmp_path, small_synth):
        dump_corpus(small_synth, tmp_path / "c.jsonl")
        again = load_corpus(tmp_path / "c.jsonl", name=small_synth.name)
        assert again.users == small_synth.users

    def test_stats_match_brute_force(self, small_synth):
        posts = [len(u.posts) for u in small_synth]
        words = [len((p.title + " " + p.content).split()) for u in small_synth for p in u.posts]
        s = small_synth.stats
        assert s.posts_mean == pytest.approx(sum(posts) / len(posts))
        assert (s.posts_min, s.posts_max) == (min(posts), max(posts))
        assert s.words_mean == pytest.approx(sum(words) / len(words))
        assert (s.words_min, s.words_max) == (min(words), max(words))
        assert s.positives + s.negatives == s.total


class TestPreprocess:
    @pytest.mark.parametrize("raw, expected", [
        ("Check https://a.b/c NOW", "check weblink now"),
        ("&amp; so so so hungry", "& so hungry"),
        ("", ""),
        ("see www.example.com/x and http://y.z", "see weblink and weblink"),
        ("caf&#233; &#x41;BC", "café abc"),
        ("  spaced\t\tout \n text ", "spaced out text"),
        ("Hungry hungry HUNGRY", "hungry"),
    ])
    def test_examples(self, raw, expected):
        assert preprocess(raw) == expected

    def test_nested_entities_decoded(self):
        assert preprocess("&amp;amp;") == "&"

    @settings(max_examples=400)
    @given(st.text())
    def test_idempotent(self, s):
        once = preprocess(s)
        assert preprocess(once) == once

    @settings(max_examples=200)
    @given(st.lists(st.sampled_from(["a", "b", "&amp;", "http://x.y", "www.q", "A", " ", "&#65;", "ß", "ﬁ"]),
                    max_size=12))
    def test_idempotent_on_tricky_tokens(self, parts):
        s = " ".join(parts)
        assert preprocess(preprocess(s)) == preprocess(s)


class TestDelaySchedule:
    @pytest.mark.parametrize("n, m, expected", [
        (30, 10, [10, 20, 30]),
        (25, 10, [10, 20, 25]),
        (1, 10, [1]),
        (10, 1, list(range(1, 11))),
    ])
    def test_examples(self, n, m, expected):
        assert delay_schedule(n, m) == expected

    def test_zero_window(self):
        with pytest.raises(ValueError):
            delay_schedule(5, 0)

    def test_partition_property(self):
        for n, m in itertools.product(range(1, 101), range(1, 21)):
            covered = []
            for d in delay_schedule(n, m):
                covered.extend(window_bounds(d, m, BLOCK, history_len=n))
            assert covered == list(range(n)), (n, m)


class TestWindow:
    @pytest.fixture
    def history(self):
        return make_user("s", "negative", [("", f"w{i}") for i in range(25)])

    def test_block_first(self, history):
        w = window_at(history, 10, 10, BLOCK)
        assert w.text == " ".join(f"w{i}" for i in range(10)) and w.delay == 10

    def test_sliding_first_post(self, history):
        assert window_at(history, 1, 10, SLIDING).text == "w0"

    def test_sliding_indices(self, history):
        for d in range(1, 26):
            expected = [f"w{i}" for i in range(max(0, d - 10), d)]
            assert window_at(history, d, 10, SLIDING).text.split() == expected

    def test_block_partial_final(self, history):
        assert window_at(history, 25, 10, BLOCK).text.split() == [f"w{i}" for i in range(20, 25)]

    def test_out_of_range(self, history):
        with pytest.raises(ValueError):
            window_at(history, 26, 10)
        with pytest.raises(ValueError):
            window_at(history, 0, 10)

    def test_titles(self):
        h = make_user("s", None, [("Title", "Body")])
        assert window_at(h, 1, 10).text == "title body"
        assert window_at(h, 1, 10, include_titles=False).text == "body"

    def test_render(self):
        assert render_input("i don't feel like eating", 10) == "[CLS] i don't feel like eating [TIME] 10 [SEP]"


class TestSplit:
    @pytest.fixture
    def ten(self):
        users = [make_user(f"u{i}", "positive" if i < 2 else "negative", [("", "x")]) for i in range(10)]
        return Corpus("ten", tuple(users))

    def test_sizes_and_strata(self, ten):
        train, valid = split_train_valid(ten, 0.8, seed=1)
        assert (len(train), len(valid)) == (8, 2)
        assert train.stats.positives >= 1 and valid.stats.positives >= 1

    def test_stratified_over_seeds(self):
        # enumerate label counts: any corpus with >=2 positives keeps one on each side
        for n_pos, n_neg in itertools.product(range(2, 6), range(0, 8)):
            users = [make_user(f"p{i}", "positive", [("", "x")]) for i in range(n_pos)]
            users += [make_user(f"n{i}", "negative", [("", "x")]) for i in range(n_neg)]
            c = Corpus("c", tuple(users))
            for seed in range(3):
                tr, va = split_train_valid(c, 0.8, seed)
                assert tr.stats.positives >= 1 and va.stats.positives >= 1
                assert len(tr) >= 1 and len(va) >= 1

    def test_deterministic(self, ten):
        a = split_train_valid(ten, 0.8, seed=5)
        b = split_train_valid(ten, 0.8, seed=5)
        assert [u.subject_id for u in a[0]] == [u.subject_id for u in b[0]]

    def test_partition(self, small_synth):
        tr, va = split_train_valid(small_synth, 0.8, seed=2)
        a = {u.subject_id for u in tr}
        b = {u.subject_id for u in va}
        assert not a & b and a | b == {u.subject_id for u in small_synth}

    def test_one_user(self):
        with pytest.raises(CorpusError):
            split_train_valid(Corpus("one", (make_user("x", "positive", [("", "a")]),)), 0.8)


class TestTruncate:
    def test_long_user(self):
        c = Corpus("c", (make_user("x", "positive", [("", str(i)) for i in range(1999)]),))
        t = truncate_histories(c, 200)
        assert len(t.users[0].posts) == 200 and t.users[0].label == "positive"

    def test_short_unchanged(self):
        c = Corpus("c", (make_user("x", "negative", [("", str(i)) for i in range(9)]),))
        assert truncate_histories(c, 200).users == c.users

    def test_max_one(self, small_synth):
        assert all(len(u.posts) == 1 for u in truncate_histories(small_synth, 1))
