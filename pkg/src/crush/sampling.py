"""Stochastic selection procedures used by the training phases.

Every sampler is a pure function of its inputs plus a numpy Generator, so
re-seeding the stream reproduces the draw exactly. Streams come from
crush.rng.rng_stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AnchorSkipped
from .social_graph import Post, SocialGraph, thread_posts, user_posts


@dataclass(frozen=True)
class UserSet:
    """Anchor's author at index 0 plus k distinct other users."""

    users: tuple

    def __post_init__(self):
        if len(set(self.users)) != len(self.users):
            raise ValueError("user set contains duplicates")

    @property
    def k(self) -> int:
        return len(self.users) - 1


@dataclass(frozen=True)
class PostSet:
    """One post per user of the paired UserSet; index 0 is the positive."""

    posts: tuple

    @property
    def k(self) -> int:
        return len(self.posts) - 1


@dataclass(frozen=True)
class AuxPostSet:
    """Same-class positive at index 0, two posts per other class after it."""

    posts: tuple

    @property
    def l(self) -> int:
        return len(self.posts) - 1


@dataclass(frozen=True)
class ContextSet:
    """Thread neighbors and author-timeline neighbors of an anchor."""

    thread_part: tuple = field(default=())
    user_part: tuple = field(default=())

    @property
    def m(self) -> int:
        return len(self.thread_part) + len(self.user_part)

    @property
    def posts(self) -> tuple:
        return self.thread_part + self.user_part


def _choice_without_replacement(rng: np.random.Generator, items: list, size: int) -> list:
    if size == 0:
        return []
    idx = rng.choice(len(items), size=size, replace=False)
    return [items[i] for i in idx]


def sample_user_set(graph: SocialGraph, anchor: Post, k: int, rng: np.random.Generator) -> UserSet:
    """Anchor's author plus k users drawn uniformly without replacement.

    Raises AnchorSkipped when the author has fewer than two posts (no
    positive sample can exist), ValueError when k is not smaller than the
    number of users in the graph.
    """
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    if k >= graph.user_count:
        raise ValueError(f"k={k} must be smaller than user count {graph.user_count}")
    if len(graph.user_index.get(anchor.author, ())) < 2:
        raise AnchorSkipped(f"author {anchor.author!r} has fewer than 2 posts")
    others = [u for u in graph.user_index if u != anchor.author]
    sampled = _choice_without_replacement(rng, others, k)
    return UserSet(users=(anchor.author, *sampled))


def sample_post_set(
    graph: SocialGraph, anchor: Post, user_set: UserSet, rng: np.random.Generator
) -> PostSet:
    """One uniformly drawn post per user; the positive cannot be the anchor itself."""
    positive_pool = user_posts(graph, anchor.author, exclude={anchor.id})
    if not positive_pool:
        raise ValueError(
            f"author {anchor.author!r} has no post besides the anchor; "
            "anchor should have been skipped upstream"
        )
    picks = [positive_pool[rng.integers(len(positive_pool))]]
    for user in user_set.users[1:]:
        pool = user_posts(graph, user)
        if not pool:
            raise ValueError(f"user {user!r} has no posts")
        picks.append(pool[rng.integers(len(pool))])
    return PostSet(posts=tuple(picks))


def sample_aux_post_set(train_set: list, anchor: Post, rng: np.random.Generator) -> AuxPostSet:
    """Class-contrastive candidates: a same-class positive plus two posts
    from every other class present in the labeled training set."""
    if anchor.label is None or not anchor.label.is_class:
        raise ValueError("anchor must carry a class label")
    by_class: dict = {}
    for post in train_set:
        if post.label is None or not post.label.is_class:
            raise ValueError(f"unlabeled post {post.id!r} in labeled training set")
        by_class.setdefault(post.label.class_index, []).append(post)
    anchor_class = anchor.label.class_index
    positive_pool = [p for p in by_class.get(anchor_class, []) if p.id != anchor.id]
    if not positive_pool:
        raise ValueError(f"class {anchor_class} has no labeled post besides the anchor")
    picks = [positive_pool[rng.integers(len(positive_pool))]]
    for cls in sorted(by_class):
        if cls == anchor_class:
            continue
        pool = by_class[cls]
        if len(pool) < 2:
            raise ValueError(f"class {cls} has fewer than 2 labeled posts")
        picks.extend(_choice_without_replacement(rng, pool, 2))
    return AuxPostSet(posts=tuple(p.id for p in picks))


def sample_context_set(
    graph: SocialGraph, anchor: Post, n_a: int, n_b: int, rng: np.random.Generator
) -> ContextSet:
    """Up to n_a posts from the anchor's thread and up to n_b from its
    author's timeline, uniformly without replacement, anchor excluded.
    Empty parts are valid."""
    if n_a < 0 or n_b < 0:
        raise ValueError("context budgets must be >= 0")
    thread_pool = thread_posts(graph, anchor.thread, exclude={anchor.id})
    user_pool = user_posts(graph, anchor.author, exclude={anchor.id})
    thread_part = _choice_without_replacement(rng, thread_pool, min(n_a, len(thread_pool)))
    user_part = _choice_without_replacement(rng, user_pool, min(n_b, len(user_pool)))
    return ContextSet(thread_part=tuple(thread_part), user_part=tuple(user_part))


def _kmeans_once(values: np.ndarray, k: int, rng: np.random.Generator):
    """One k-means++ seeded Lloyd run on 1-D data; returns (assignment, centers, sse)."""
    n = len(values)
    centers = np.empty(k, dtype=float)
    centers[0] = values[rng.integers(n)]
    dist2 = (values - centers[0]) ** 2
    for j in range(1, k):
        total = dist2.sum()
        if total <= 0.0:
            # All remaining points coincide with chosen centers; spread over
            # the unused distinct values instead.
            unused = np.setdiff1d(np.unique(values), centers[:j])
            centers[j] = unused[rng.integers(len(unused))]
        else:
            centers[j] = values[rng.choice(n, p=dist2 / total)]
        dist2 = np.minimum(dist2, (values - centers[j]) ** 2)

    assignment = np.zeros(n, dtype=int)
    for _ in range(200):
        distances = (values[:, None] - centers[None, :]) ** 2
        new_assignment = distances.argmin(axis=1)
        for j in range(k):
            members = values[new_assignment == j]
            if len(members) == 0:
                # Re-seed an emptied cluster at the point farthest from its center.
                farthest = distances.min(axis=1).argmax()
                centers[j] = values[farthest]
                new_assignment[farthest] = j
            else:
                centers[j] = members.mean()
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
    sse = ((values - centers[assignment]) ** 2).sum()
    return assignment, centers, sse


def proxy_class_labels(scores: list, k: int, rng: np.random.Generator, n_init: int = 8) -> list:
    """Cluster 1-D scores into k groups with Lloyd's algorithm and return a
    cluster index per score.

    Cluster ids are relabeled by ascending centroid, so a converged
    partition always maps to the same labels. Restarts (n_init) keep the
    best of several k-means++ seedings.
    """
    if len(scores) == 0:
        raise ValueError("scores must be non-empty")
    values = np.asarray(scores, dtype=float)
    distinct = len(np.unique(values))
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > distinct:
        raise ValueError(f"k={k} exceeds the {distinct} distinct score values")
    best = None
    for _ in range(max(1, n_init)):
        assignment, centers, sse = _kmeans_once(values, k, rng)
        if best is None or sse < best[2] - 1e-12:
            best = (assignment, centers, sse)
    assignment, centers, _ = best
    order = np.argsort(centers, kind="stable")
    relabel = np.empty(k, dtype=int)
    relabel[order] = np.arange(k)
    return [int(relabel[a]) for a in assignment]


def fewshot_subsample(train_set: list, fraction: float, rng: np.random.Generator) -> list:
    """Uniform subset without replacement of size ceil(fraction * N),
    returned in the original order."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    n = len(train_set)
    size = math.ceil(fraction * n)
    if size < 1:
        raise ValueError("subsample would be empty")
    idx = sorted(rng.choice(n, size=size, replace=False))
    return [train_set[i] for i in idx]
