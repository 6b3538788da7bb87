"""Ingestion and indexing of the social-network structure.

Posts, the users who wrote them, and the threads they live in are the three
things every sampling procedure queries. The graph is immutable once built:
ingestion is the single writer, everything downstream only reads.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .errors import GraphFormatError

GRAPH_FORMAT = "crush-graph"
GRAPH_VERSION = 1

_URL_RE = re.compile(r"(?:https?://|www\.)\S+")
_MENTION_RE = re.compile(r"@\w+")
_WS_RE = re.compile(r"\s+")
# Covers the common emoji blocks; exact handling is configurable because
# upstream preprocessing pipelines disagree on it.
_EMOJI_RE = re.compile(
    "[\U0001f300-\U0001faff\U00002600-\U000027bf\U0001f000-\U0001f0ff\U0000fe00-\U0000fe0f]+"
)


def normalize_text(text: str, strip_emoji: bool = False) -> str:
    """Lowercase, replace URLs/user mentions with tokens, collapse whitespace."""
    text = text.lower()
    text = _URL_RE.sub("<url>", text)
    text = _MENTION_RE.sub("<user>", text)
    if strip_emoji:
        text = _EMOJI_RE.sub(" ", text)
    return _WS_RE.sub(" ", text).strip()


@dataclass(frozen=True)
class Label:
    """Supervision attached to a post: a class index or a score in [-1, 1]."""

    class_index: Optional[int] = None
    score: Optional[float] = None

    def __post_init__(self):
        if (self.class_index is None) == (self.score is None):
            raise ValueError("label must carry exactly one of class_index/score")
        if self.class_index is not None and self.class_index < 0:
            raise ValueError(f"class_index must be >= 0, got {self.class_index}")
        if self.score is not None and not -1.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [-1, 1], got {self.score}")

    @property
    def is_class(self) -> bool:
        return self.class_index is not None

    def to_json(self):
        if self.class_index is not None:
            return {"class": self.class_index}
        return {"score": self.score}

    @staticmethod
    def from_json(obj) -> "Label":
        if isinstance(obj, bool):
            raise ValueError(f"invalid label {obj!r}")
        if isinstance(obj, int):
            return Label(class_index=obj)
        if isinstance(obj, float):
            return Label(score=obj)
        if isinstance(obj, dict):
            if set(obj) == {"class"}:
                return Label(class_index=int(obj["class"]))
            if set(obj) == {"score"}:
                return Label(score=float(obj["score"]))
        raise ValueError(f"invalid label {obj!r}")


@dataclass(frozen=True)
class Post:
    id: str
    author: str
    thread: str
    text: str
    parent: Optional[str] = None
    label: Optional[Label] = None

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "author": self.author,
            "thread": self.thread,
            "parent": self.parent,
            "text": self.text,
            "label": self.label.to_json() if self.label is not None else None,
        }


@dataclass
class IngestReport:
    """Counters for everything ingestion dropped, rejected, or repaired."""

    ingested: int = 0
    dropped_empty: int = 0
    capped: int = 0
    parents_cleared: int = 0
    rejected: list = field(default_factory=list)  # (line_number, reason)

    def to_dict(self) -> dict:
        return {
            "ingested": self.ingested,
            "dropped_empty": self.dropped_empty,
            "capped": self.capped,
            "parents_cleared": self.parents_cleared,
            "rejected": [{"line": n, "reason": r} for n, r in self.rejected],
        }


@dataclass
class SocialGraph:
    """Indexed post store: id -> post, user -> posts, thread -> posts.

    Index lists keep insertion order so that ingestion of the same input
    stream always produces the identical graph.
    """

    posts: dict = field(default_factory=dict)
    user_index: dict = field(default_factory=dict)
    thread_index: dict = field(default_factory=dict)
    ingest_report: Optional[IngestReport] = field(default=None, compare=False)

    @property
    def user_count(self) -> int:
        return len(self.user_index)

    def __len__(self) -> int:
        return len(self.posts)

    def post(self, post_id: str) -> Post:
        return self.posts[post_id]

    def labeled_posts(self) -> list:
        return [p for p in self.posts.values() if p.label is not None]

    def _add(self, post: Post) -> None:
        self.posts[post.id] = post
        self.user_index.setdefault(post.author, []).append(post.id)
        self.thread_index.setdefault(post.thread, []).append(post.id)


_REQUIRED_FIELDS = ("id", "author", "thread", "text")


def _parse_record(obj: dict, preprocessor: Callable[[str], str]) -> Post:
    for name in _REQUIRED_FIELDS:
        if name not in obj:
            raise ValueError(f"missing field {name!r}")
        if not isinstance(obj[name], str):
            raise ValueError(f"field {name!r} must be a string")
        if name != "text" and not obj[name]:
            raise ValueError(f"field {name!r} must be non-empty")
    parent = obj.get("parent")
    if parent is not None and not isinstance(parent, str):
        raise ValueError("field 'parent' must be a string or null")
    label = obj.get("label")
    return Post(
        id=obj["id"],
        author=obj["author"],
        thread=obj["thread"],
        parent=parent or None,
        text=preprocessor(obj["text"]),
        label=Label.from_json(label) if label is not None else None,
    )


def ingest_posts(
    records: Iterable,
    preprocessor: Optional[Callable[[str], str]] = None,
    max_user_posts: Optional[int] = None,
) -> SocialGraph:
    """Build a SocialGraph from a stream of post records.

    ``records`` yields JSON-lines strings or already-decoded dicts. Malformed
    records are rejected individually (with their 1-based line number in the
    report) and never abort the run; a duplicate post id does abort, because
    it poisons every index. ``max_user_posts`` caps how many posts are kept
    per user (the per-dataset context budget); excess posts are dropped and
    counted.
    """
    preprocessor = preprocessor or normalize_text
    graph = SocialGraph()
    report = IngestReport()
    for line_no, raw in enumerate(records, start=1):
        if isinstance(raw, (str, bytes)):
            if isinstance(raw, bytes):
                raw = raw.decode("utf-8")
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                report.rejected.append((line_no, f"invalid JSON: {exc.msg}"))
                continue
        else:
            obj = raw
        if not isinstance(obj, dict):
            report.rejected.append((line_no, "record is not an object"))
            continue
        try:
            post = _parse_record(obj, preprocessor)
        except ValueError as exc:
            report.rejected.append((line_no, str(exc)))
            continue
        if post.id in graph.posts:
            raise ValueError(f"duplicate post id {post.id!r} (line {line_no})")
        if not post.text:
            report.dropped_empty += 1
            continue
        if (
            max_user_posts is not None
            and len(graph.user_index.get(post.author, ())) >= max_user_posts
        ):
            report.capped += 1
            continue
        graph._add(post)
        report.ingested += 1

    # Parent links must stay inside the graph and inside the same thread;
    # anything else (rejected, capped, or foreign parent) is cleared.
    for pid, post in list(graph.posts.items()):
        if post.parent is None:
            continue
        target = graph.posts.get(post.parent)
        if target is None or target.thread != post.thread or post.parent == pid:
            graph.posts[pid] = Post(
                id=post.id,
                author=post.author,
                thread=post.thread,
                parent=None,
                text=post.text,
                label=post.label,
            )
            report.parents_cleared += 1

    graph.ingest_report = report
    return graph


def user_posts(graph: SocialGraph, user: str, exclude=frozenset()) -> list:
    """All posts authored by ``user`` minus ``exclude``, in insertion order."""
    if user not in graph.user_index:
        raise KeyError(f"unknown user {user!r}")
    return [pid for pid in graph.user_index[user] if pid not in exclude]


def thread_posts(graph: SocialGraph, thread: str, exclude=frozenset()) -> list:
    """All posts in ``thread`` minus ``exclude``, in insertion order."""
    if thread not in graph.thread_index:
        raise KeyError(f"unknown thread {thread!r}")
    return [pid for pid in graph.thread_index[thread] if pid not in exclude]


def _dump_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def save_graph(graph: SocialGraph, path) -> None:
    """Write a versioned JSON-lines snapshot (header line, then one post per line)."""
    with open(path, "w", encoding="utf-8") as fh:
        header = {"format": GRAPH_FORMAT, "version": GRAPH_VERSION, "posts": len(graph)}
        fh.write(_dump_line(header) + "\n")
        for post in graph.posts.values():
            fh.write(_dump_line(post.to_json()) + "\n")


def load_graph(path) -> SocialGraph:
    """Read a snapshot produced by save_graph; raises GraphFormatError on mismatch."""
    graph = SocialGraph()
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise GraphFormatError(f"unreadable snapshot header: {exc.msg}") from exc
        if not isinstance(header, dict) or header.get("format") != GRAPH_FORMAT:
            raise GraphFormatError(f"not a {GRAPH_FORMAT} snapshot: {path}")
        if header.get("version") != GRAPH_VERSION:
            raise GraphFormatError(
                f"snapshot version {header.get('version')!r} unsupported "
                f"(expected {GRAPH_VERSION})"
            )
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                post = _parse_record(json.loads(line), lambda t: t)
            except (json.JSONDecodeError, ValueError) as exc:
                raise GraphFormatError(f"corrupt snapshot line {line_no}: {exc}") from exc
            if post.id in graph.posts:
                raise GraphFormatError(f"duplicate post id {post.id!r} in snapshot")
            graph._add(post)
        if header.get("posts") != len(graph):
            raise GraphFormatError(
                f"snapshot declares {header.get('posts')} posts, found {len(graph)}"
            )
    return graph
