import itertools
import json
import math
import random

import numpy as np
import pytest

from erdkit.corpus import SLIDING, WindowedInput, make_user, preprocess, window_at
from erdkit.predictor import (
    FORMAT_VERSION,
    LexiconScorer,
    ModelFormatError,
    TimeAwareModel,
    build_vocabulary,
    featurize,
    featurize_batch,
    lexicon_score,
    load_lexicon,
    load_model,
    load_scorer,
    save_model,
    score,
    score_batch,
)
from erdkit.synth import generate_corpus


@pytest.fixture
def model():
    return TimeAwareModel.zeros(["calories", "hungry", "match", "rain"])


def wi(text, delay=10, sid="s"):
    return WindowedInput(sid, preprocess(text), delay)


class TestFeaturize:
    def test_repeated_word_counts_once(self, model):
        f = featurize(wi("hungry hungry"), model)
        assert f[model.vocabulary["hungry"]] == 1.0

    def test_empty_text(self, model):
        f = featurize(wi(""), model)
        assert set(f) == {model.bias_index, model.delay_index}
        assert f[model.bias_index] == 1.0

    def test_delay_feature(self, model):
        assert featurize(wi("", delay=10), model)[model.delay_index] == pytest.approx(0.05)

    def test_delay_capped(self, model):
        assert featurize(wi("", delay=1999), model)[model.delay_index] == 1.0

    def test_l2_normalized_and_oov_dropped(self, model):
        f = featurize(wi("calories rain unknown calories? rain match"), model)
        words = [v for i, v in f.items() if i < model.bias_index]
        assert sum(v * v for v in words) == pytest.approx(1.0)
        assert len(words) == 3

    def test_batch_matches_single(self, model):
        inputs = [wi("calories rain", 3), wi("", 1), wi("match match hungry", 40)]
        batch = featurize_batch(inputs, model)
        dense = batch.dense()
        for r, inp in enumerate(inputs):
            row = np.zeros(model.n_features)
            for i, v in featurize(inp, model).items():
                row[i] = v
            np.testing.assert_array_equal(dense[r], row)


class TestScore:
    def test_zero_weights(self, model):
        assert score(model, wi("calories hungry")).p_pos == 0.5

    def test_deterministic(self, model):
        model.weights[:] = np.linspace(-1, 1, model.n_features)
        assert score(model, wi("calories rain")) == score(model, wi("calories rain"))

    def test_open_interval(self, model):
        model.weights[:] = 3.0
        p = score(model, wi("calories hungry match rain", 200)).p_pos
        assert 0 < p < 1

    def test_separable_toy_fit(self):
        # marker token present only in positives; closed-form separable, so a
        # plain logistic fit must push positive windows above 0.9
        from erdkit.trainer import TrainConfig, fit
        c = generate_corpus(n_users=60, pos_rate=0.3, min_posts=10, max_posts=20, marker_strength=3.0, seed=2)
        res = fit(c, TrainConfig(epochs=10))
        for u in c.users:
            p = score(res.model, window_at(u, 10, 10, SLIDING)).p_pos
            if u.is_positive:
                assert p > 0.9
            else:
                assert p < 0.5

    def test_order_invariance(self):
        m = TimeAwareModel.zeros(["a", "b", "c", "d"])
        m.weights[:] = [0.3, -1.2, 2.0, 0.7, -0.5, 0.4]
        posts = [("", "a b"), ("", "c"), ("", "d a"), ("", "b b c")]
        ref = None
        for perm in itertools.permutations(posts):
            h = make_user("s", None, perm)
            p = score(m, window_at(h, 4, 10)).p_pos
            ref = p if ref is None else ref
            assert p == pytest.approx(ref, abs=1e-15)

    def test_delay_monotone(self, model):
        model.weights[model.delay_index] = 0.8
        ps = [score(model, wi("rain", d)).p_pos for d in range(1, 201)]
        assert all(b > a for a, b in zip(ps, ps[1:]))

    def test_batch_matches_single(self, model):
        rng = np.random.default_rng(0)
        model.weights[:] = rng.normal(size=model.n_features)
        inputs = [wi(t, d) for t, d in [("calories", 3), ("rain match", 50), ("", 7)]]
        np.testing.assert_allclose(score_batch(model, featurize_batch(inputs, model)),
                                   [score(model, i).p_pos for i in inputs], rtol=1e-14)


class TestLexicon:
    def test_no_match(self):
        assert lexicon_score({"x": 2.0}, wi("nothing here")).p_pos == 0.5

    def test_one_match(self):
        assert lexicon_score({"calories": 2.0}, wi("calories")).p_pos == pytest.approx(1 / (1 + math.exp(-2)))
        assert lexicon_score({"calories": 2.0}, wi("calories")).p_pos == pytest.approx(0.881, abs=5e-4)

    def test_monotone(self):
        lex = {"a": 0.5, "b": 1.5}
        rng = random.Random(0)
        for _ in range(200):
            toks = [rng.choice(["a", "b", "x", "y"]) for _ in range(rng.randint(0, 8))]
            base = lexicon_score(lex, WindowedInput("s", " ".join(toks), 1)).p_pos
            more = lexicon_score(lex, WindowedInput("s", " ".join(toks + ["z", "a"]), 1)).p_pos
            assert more >= base

    def test_empty_lexicon(self):
        with pytest.raises(ValueError):
            lexicon_score({}, wi("a"))

    def test_file(self, tmp_path):
        (tmp_path / "lex.json").write_text(json.dumps({"calories": 3}))
        s = load_lexicon(tmp_path / "lex.json")
        assert isinstance(s, LexiconScorer) and s(wi("calories")).p_pos > 0.95


class TestPersistence:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        m = TimeAwareModel.zeros(["b", "a", "ü"])
        m.weights[:] = rng.normal(size=m.n_features) * 1e3 + 1e-17
        save_model(m, tmp_path / "m.json")
        back = load_model(tmp_path / "m.json")
        assert back == m
        assert back.weights.tobytes() == m.weights.tobytes()

    def test_truncated(self, tmp_path, model):
        save_model(model, tmp_path / "m.json")
        raw = (tmp_path / "m.json").read_text()
        (tmp_path / "m.json").write_text(raw[: len(raw) // 2])
        with pytest.raises(ModelFormatError, match="corrupt"):
            load_model(tmp_path / "m.json")

    def test_unknown_version(self, tmp_path, model):
        save_model(model, tmp_path / "m.json")
        doc = json.loads((tmp_path / "m.json").read_text())
        doc["format_version"] = 99
        (tmp_path / "m.json").write_text(json.dumps(doc))
        with pytest.raises(ModelFormatError, match=f"99.*{FORMAT_VERSION}"):
            load_model(tmp_path / "m.json")

    def test_weight_shape_checked(self, tmp_path, model):
        save_model(model, tmp_path / "m.json")
        doc = json.loads((tmp_path / "m.json").read_text())
        doc["weights"] = doc["weights"][:-1]
        (tmp_path / "m.json").write_text(json.dumps(doc))
        with pytest.raises(ModelFormatError):
            load_model(tmp_path / "m.json")

    def test_load_scorer_requires_one(self):
        with pytest.raises(ValueError):
            load_scorer()


def test_vocabulary_min_count():
    v = build_vocabulary(["a b c", "a c", "d"], min_count=2)
    assert v == {"a": 0, "c": 1}
