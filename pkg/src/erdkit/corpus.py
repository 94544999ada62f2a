"""Labeled user post histories: loading, cleaning, splitting and windowing.

Corpora live on disk as JSON-lines, one user per line::

    {"subject_id": "s1", "label": "positive",
     "posts": [{"title": "", "content": "...", "date": "2018-01-01T00:00:00"}]}

Every other module reads posts through :func:`window_at`, so training and
test-time windows are built by the same code.
"""
from __future__ import annotations

import html
import json
import random
import re
import statistics
import unicodedata
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

POSITIVE = "positive"
NEGATIVE = "negative"
LABELS = (POSITIVE, NEGATIVE)

BLOCK = "block"
SLIDING = "sliding"

URL_TOKEN = "weblink"
_URL_RE = re.compile(r"(?:[a-z][a-z0-9+.\-]*://|www\.)\S+", re.IGNORECASE)


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Post:
    subject_id: str
    seq: int
    title: str
    content: str
    date: str = ""

    def text(self, include_title: bool = True) -> str:
        if include_title and self.title:
            return f"{self.title} {self.content}"
        return self.content

    def to_payload(self) -> dict:
        return {"subject_id": self.subject_id, "seq": self.seq, "title": self.title,
                "content": self.content, "date": self.date}


@dataclass(frozen=True)
class UserHistory:
    subject_id: str
    label: str | None
    posts: tuple[Post, ...]

    def __post_init__(self):
        if self.label is not None and self.label not in LABELS:
            raise CorpusError(f"unknown label {self.label!r}")
        for i, post in enumerate(self.posts):
            if post.seq != i:
                raise CorpusError(f"{self.subject_id}: post seq {post.seq} at position {i}")

    @property
    def is_positive(self) -> bool:
        return self.label == POSITIVE

    def __len__(self) -> int:
        return len(self.posts)


@dataclass(frozen=True)
class CorpusStats:
    total: int
    positives: int
    negatives: int
    posts_mean: float
    posts_min: int
    posts_max: int
    words_mean: float
    words_min: int
    words_max: int

    def table_row(self, name: str) -> str:
        """One line in the column order of the usual corpus-details table."""
        return (f"{name:<16} users {self.total:>5} pos {self.positives:>4} neg {self.negatives:>5} | "
                f"posts/user mean {self.posts_mean:>7.1f} min {self.posts_min:>5} max {self.posts_max:>5} | "
                f"words/post mean {self.words_mean:>6.1f} min {self.words_min:>4} max {self.words_max:>6}")


def compute_stats(users: Sequence[UserHistory]) -> CorpusStats:
    positives = sum(1 for u in users if u.is_positive)
    n_posts = [len(u.posts) for u in users]
    n_words = [len(p.text().split()) for u in users for p in u.posts]
    if not users:
        return CorpusStats(0, 0, 0, 0.0, 0, 0, 0.0, 0, 0)
    return CorpusStats(
        total=len(users),
        positives=positives,
        negatives=len(users) - positives,
        posts_mean=statistics.fmean(n_posts),
        posts_min=min(n_posts),
        posts_max=max(n_posts),
        words_mean=statistics.fmean(n_words) if n_words else 0.0,
        words_min=min(n_words, default=0),
        words_max=max(n_words, default=0),
    )


@dataclass(frozen=True)
class Corpus:
    name: str
    users: tuple[UserHistory, ...]
    stats: CorpusStats = field(init=False, compare=False)

    def __post_init__(self):
        seen = set()
        for u in self.users:
            if u.subject_id in seen:
                raise CorpusError(f"duplicate subject_id {u.subject_id!r}")
            seen.add(u.subject_id)
        object.__setattr__(self, "users", tuple(self.users))
        object.__setattr__(self, "stats", compute_stats(self.users))

    def __len__(self) -> int:
        return len(self.users)

    def __iter__(self):
        return iter(self.users)

    def by_id(self) -> dict[str, UserHistory]:
        return {u.subject_id: u for u in self.users}

    def gold(self) -> dict[str, str]:
        return {u.subject_id: u.label for u in self.users}

    @property
    def max_posts(self) -> int:
        return max((len(u.posts) for u in self.users), default=0)


def make_user(subject_id: str, label: str | None, posts: Iterable[dict | tuple]) -> UserHistory:
    """Build a history from ``{"title", "content", "date"}`` dicts or ``(title, content)`` pairs."""
    built = []
    for i, p in enumerate(posts):
        if isinstance(p, dict):
            built.append(Post(subject_id, i, p.get("title", ""), p.get("content", ""), p.get("date", "")))
        else:
            title, content = p[0], p[1]
            built.append(Post(subject_id, i, title, content, p[2] if len(p) > 2 else ""))
    return UserHistory(subject_id, label, tuple(built))


def _parse_user(obj, lineno: int) -> UserHistory:
    if not isinstance(obj, dict):
        raise CorpusError(f"line {lineno}: expected a JSON object")
    missing = {"subject_id", "label", "posts"} - obj.keys()
    if missing:
        raise CorpusError(f"line {lineno}: missing keys {sorted(missing)}")
    if obj["label"] not in LABELS:
        raise CorpusError(f"line {lineno}: unknown label {obj['label']!r}")
    if not isinstance(obj["subject_id"], str) or not isinstance(obj["posts"], list):
        raise CorpusError(f"line {lineno}: subject_id must be a string and posts a list")
    if not obj["posts"]:
        raise CorpusError(f"line {lineno}: subject {obj['subject_id']!r} has no posts")
    posts = []
    for i, p in enumerate(obj["posts"]):
        if not isinstance(p, dict) or not isinstance(p.get("content", ""), str):
            raise CorpusError(f"line {lineno}: post {i} is malformed")
        posts.append(Post(obj["subject_id"], i, str(p.get("title", "")), p.get("content", ""),
                          str(p.get("date", ""))))
    return UserHistory(obj["subject_id"], obj["label"], tuple(posts))


def load_corpus(path, name: str | None = None) -> Corpus:
    path = Path(path)
    users = []
    seen = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}: line {lineno}: malformed JSON ({exc.msg})") from None
            user = _parse_user(obj, lineno)
            if user.subject_id in seen:
                raise CorpusError(f"{path}: line {lineno}: duplicate subject_id {user.subject_id!r}")
            seen.add(user.subject_id)
            users.append(user)
    if not users:
        raise CorpusError(f"{path}: empty corpus")
    return Corpus(name or path.stem, tuple(users))


def dump_corpus(corpus: Corpus, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for u in corpus.users:
            obj = {"subject_id": u.subject_id, "label": u.label,
                   "posts": [{"title": p.title, "content": p.content, "date": p.date} for p in u.posts]}
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def _unescape(text: str) -> str:
    for _ in range(8):
        decoded = html.unescape(text)
        if decoded == text:
            break
        text = decoded
    return text


def _clean_once(text: str) -> str:
    text = _unescape(text)
    text = unicodedata.normalize("NFKC", text).lower()
    text = _URL_RE.sub(f" {URL_TOKEN} ", text)
    out: list[str] = []
    for tok in text.split():
        if not out or out[-1] != tok:
            out.append(tok)
    return " ".join(out)


def preprocess(text: str) -> str:
    """Lowercase, decode entities, replace URLs by ``weblink``, collapse repeated words.

    Applied until it reaches a fixed point, so it is idempotent by construction.
    """
    for _ in range(8):
        cleaned = _clean_once(text)
        if cleaned == text:
            return cleaned
        text = cleaned
    return text


def delay_schedule(history_len: int, window: int) -> list[int]:
    if window < 1:
        raise ValueError("window must be >= 1")
    if history_len < 1:
        raise ValueError("history_len must be >= 1")
    delays = list(range(window, history_len + 1, window))
    if history_len % window:
        delays.append(history_len)
    return delays


@dataclass(frozen=True)
class WindowedInput:
    subject_id: str
    text: str
    delay: int

    def render(self) -> str:
        """Transformer-style input string with the explicit time marker."""
        return render_input(self.text, self.delay)


def render_input(text: str, delay: int) -> str:
    return f"[CLS] {text} [TIME] {delay} [SEP]"


def window_bounds(delay: int, window: int, mode: str = SLIDING, history_len: int | None = None) -> range:
    """Post indices covered by the window ending at ``delay``.

    Block windows start at the previous schedule point, sliding windows take
    the last ``window`` posts; the two coincide on the schedule's full blocks.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    if delay < 1 or (history_len is not None and delay > history_len):
        raise ValueError(f"delay {delay} outside 1..{history_len}")
    if mode == SLIDING:
        return range(max(0, delay - window), delay)
    if mode == BLOCK:
        if delay % window == 0:
            return range(delay - window, delay)
        if history_len is not None and delay != history_len:
            raise ValueError(f"delay {delay} is not on the block schedule for window {window}")
        return range((delay // window) * window, delay)
    raise ValueError(f"unknown window mode {mode!r}")


def window_at(history: UserHistory | Sequence[Post], delay: int, window: int, mode: str = SLIDING,
              include_titles: bool = True) -> WindowedInput:
    posts = history.posts if isinstance(history, UserHistory) else tuple(history)
    if not posts:
        raise ValueError("no posts available")
    idx = window_bounds(delay, window, mode, history_len=len(posts))
    # posts are cleaned one at a time so repeated-word collapsing never spans a
    # post boundary and the window stays a bag of its posts' tokens
    cleaned = (preprocess(posts[i].text(include_titles)) for i in idx)
    return WindowedInput(posts[0].subject_id, " ".join(c for c in cleaned if c), delay)


def split_train_valid(corpus: Corpus, ratio: float = 0.8, seed: int = 0) -> tuple[Corpus, Corpus]:
    """Stratified user-level split."""
    if not 0 < ratio < 1:
        raise ValueError("ratio must be in (0, 1)")
    n = len(corpus.users)
    if n < 2:
        raise CorpusError("need at least 2 users to split")
    rng = random.Random(seed)
    pos = [u for u in corpus.users if u.is_positive]
    neg = [u for u in corpus.users if not u.is_positive]
    rng.shuffle(pos)
    rng.shuffle(neg)

    n_train = min(max(round(ratio * n), 1), n - 1)
    n_pos_train = round(ratio * len(pos))
    if len(pos) >= 2:
        n_pos_train = min(max(n_pos_train, 1), len(pos) - 1)
    n_neg_train = n_train - n_pos_train
    lo = 1 if len(neg) >= 2 else 0
    hi = len(neg) - 1 if len(neg) >= 2 else len(neg)
    n_neg_train = min(max(n_neg_train, lo), hi)
    if n_pos_train + n_neg_train == n:
        # single-class corpus edge: keep the validation side nonempty
        if n_neg_train:
            n_neg_train -= 1
        else:
            n_pos_train -= 1

    train_ids = {u.subject_id for u in pos[:n_pos_train] + neg[:n_neg_train]}
    train = tuple(u for u in corpus.users if u.subject_id in train_ids)
    valid = tuple(u for u in corpus.users if u.subject_id not in train_ids)
    return Corpus(f"{corpus.name}-train", train), Corpus(f"{corpus.name}-valid", valid)


def truncate_histories(corpus: Corpus, max_posts: int) -> Corpus:
    if max_posts < 1:
        raise ValueError("max_posts must be >= 1")
    users = tuple(replace(u, posts=u.posts[:max_posts]) for u in corpus.users)
    return Corpus(corpus.name, users)
