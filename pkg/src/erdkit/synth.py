"""Synthetic labeled corpora with a controllable risk signal.

Every user writes filler text drawn from a shared vocabulary. Posts of
positive users additionally carry Poisson(``marker_strength``) tokens from a
small marker vocabulary; negative users carry Poisson(``marker_noise``).
With strength 0 and noise 0 the labels are independent of the text.
"""
from __future__ import annotations

from datetime import datetime, timedelta

import numpy as np

from .corpus import NEGATIVE, POSITIVE, Corpus, Post, UserHistory

MARKERS = ("calories", "binge", "purging", "underweight", "fasting", "skinny", "thinspo", "restrict")

FILLER = tuple("""
the a and to of in is it you that was for on are with as be at this have from or one had by but not
what all were we when your can said there use an each which she do how their if will up other about out
many then them these so some her would make like him into time has look two more write go see number no
way could people my than first water been call who oil its now find long down day did get come made may
part game music today friend work school movie night weekend city coffee dog cat rain sun book phone car
train team match song band show episode season story news paper class exam project code bug build test
lunch dinner breakfast walk run bike park beach trip plan idea question answer problem reason picture
""".split())


def generate_corpus(n_users: int = 320, pos_rate: float = 0.128, min_posts: int = 10, max_posts: int = 60,
                    marker_strength: float = 3.0, marker_noise: float = 0.0, words_min: int = 5,
                    words_max: int = 30, title_rate: float = 0.2, seed: int = 0,
                    name: str = "synthetic") -> Corpus:
    if n_users < 2:
        raise ValueError("n_users must be >= 2")
    if not 0 < pos_rate < 1:
        raise ValueError("pos_rate must be in (0, 1)")
    if not 1 <= min_posts <= max_posts:
        raise ValueError("need 1 <= min_posts <= max_posts")
    if marker_strength < 0 or marker_noise < 0:
        raise ValueError("marker rates must be nonnegative")
    rng = np.random.default_rng(seed)
    n_pos = int(round(n_users * pos_rate))
    n_pos = min(max(n_pos, 1), n_users - 1)
    labels = [POSITIVE] * n_pos + [NEGATIVE] * (n_users - n_pos)
    labels = [labels[i] for i in rng.permutation(n_users)]
    base = datetime(2018, 1, 1)
    width = len(str(n_users - 1))
    users = []
    for i, label in enumerate(labels):
        sid = f"subject{i:0{width}d}"
        rate = marker_strength if label == POSITIVE else marker_noise
        n_posts = int(rng.integers(min_posts, max_posts + 1))
        start = base + timedelta(days=int(rng.integers(0, 365)))
        posts = []
        for seq in range(n_posts):
            words = list(rng.choice(FILLER, size=int(rng.integers(words_min, words_max + 1))))
            k = int(rng.poisson(rate)) if rate > 0 else 0
            for m in rng.choice(MARKERS, size=k):
                words.insert(int(rng.integers(0, len(words) + 1)), str(m))
            title = ""
            if rng.random() < title_rate:
                title = " ".join(rng.choice(FILLER, size=int(rng.integers(1, 5))))
            date = (start + timedelta(hours=int(seq * 7 + rng.integers(0, 7)))).isoformat()
            posts.append(Post(sid, seq, title, " ".join(str(w) for w in words), date))
        users.append(UserHistory(sid, label, tuple(posts)))
    return Corpus(name, tuple(users))


def marker_lexicon(weight: float = 4.0) -> dict[str, float]:
    """Lexicon that scores any window containing a marker above 0.98."""
    return {m: weight for m in MARKERS}
