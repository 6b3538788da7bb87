"""Synthetic desk-scale corpora.

The real datasets cannot be redistributed, so these generators produce
small graphs with the structural properties the training phases exploit:
per-user writing style (disjoint vocabularies), echo-chamber threads
(neighboring posts share the anchor's class), and trivially separable or
memorizable text for overfit checks. All output is records in the
ingestion wire format.
"""

from __future__ import annotations

import json

from .rng import rng_stream
from .social_graph import Label


def _record(pid, author, thread, text, label=None, parent=None) -> dict:
    return {
        "id": pid,
        "author": author,
        "thread": thread,
        "parent": parent,
        "text": text,
        "label": label,
    }


def records_to_jsonl(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def random_post_records(
    n_posts: int,
    n_users: int,
    n_threads: int,
    seed: int = 0,
    labeled_fraction: float = 0.0,
    num_classes: int = 3,
    task: str = "classification",
    vocab: int = 200,
) -> list:
    """Uniform random graph for property tests."""
    rng = rng_stream(seed, "synth/random")
    records = []
    thread_members: dict = {}
    for i in range(n_posts):
        author = f"user{rng.integers(n_users)}"
        thread = f"thread{rng.integers(n_threads)}"
        length = int(rng.integers(3, 11))
        text = " ".join(f"w{rng.integers(vocab)}" for _ in range(length))
        parent = None
        members = thread_members.setdefault(thread, [])
        if members and rng.random() < 0.4:
            parent = members[int(rng.integers(len(members)))]
        label = None
        if rng.random() < labeled_fraction:
            if task == "classification":
                label = {"class": int(rng.integers(num_classes))}
            else:
                label = {"score": float(rng.uniform(-1.0, 1.0))}
        pid = f"p{i}"
        records.append(_record(pid, author, thread, text, label=label, parent=parent))
        members.append(pid)
    return records


def disjoint_vocab_records(
    n_users: int = 10,
    posts_per_user: int = 20,
    tokens_per_post: int = 8,
    tokens_per_user: int = 30,
    seed: int = 0,
) -> list:
    """Each user writes from a private token pool; no word is shared."""
    rng = rng_stream(seed, "synth/disjoint")
    records = []
    i = 0
    for u in range(n_users):
        pool = [f"u{u}w{j}" for j in range(tokens_per_user)]
        for _ in range(posts_per_user):
            words = [pool[int(rng.integers(len(pool)))] for _ in range(tokens_per_post)]
            records.append(
                _record(f"p{i}", f"user{u}", f"thread{i % (n_users * 2)}", " ".join(words))
            )
            i += 1
    return records


def echo_chamber_records(
    n_posts: int = 500,
    n_users: int = 30,
    n_threads: int = 25,
    num_classes: int = 3,
    thread_coherence: float = 0.9,
    tokens_per_post: int = 10,
    class_signal: float = 0.7,
    class_tokens: int = 40,
    shared_tokens: int = 40,
    seed: int = 0,
) -> tuple:
    """Threads and user timelines dominated by one class each.

    A post's true class equals its thread's class with probability
    ``thread_coherence``; its text mixes class-specific tokens (probability
    ``class_signal`` per token) with shared filler. Authors post inside
    threads of their own class, so both context axes carry signal. Returns
    (records, true_class_by_id); record labels are the TRUE classes, apply
    flip_class_labels for annotation noise.
    """
    rng = rng_stream(seed, "synth/echo")
    thread_class = [c % num_classes for c in range(n_threads)]
    users_by_class: dict = {c: [] for c in range(num_classes)}
    for u in range(n_users):
        users_by_class[u % num_classes].append(f"user{u}")
    pools = [[f"c{c}w{j}" for j in range(class_tokens)] for c in range(num_classes)]
    shared = [f"sw{j}" for j in range(shared_tokens)]
    records = []
    true_class = {}
    for i in range(n_posts):
        t = int(rng.integers(n_threads))
        t_class = thread_class[t]
        author = users_by_class[t_class][int(rng.integers(len(users_by_class[t_class])))]
        if rng.random() < thread_coherence:
            cls = t_class
        else:
            others = [c for c in range(num_classes) if c != t_class]
            cls = others[int(rng.integers(len(others)))]
        words = []
        for _ in range(tokens_per_post):
            if rng.random() < class_signal:
                words.append(pools[cls][int(rng.integers(class_tokens))])
            else:
                words.append(shared[int(rng.integers(shared_tokens))])
        pid = f"p{i}"
        records.append(_record(pid, author, f"thread{t}", " ".join(words), label={"class": cls}))
        true_class[pid] = cls
    return records, true_class


def flip_class_labels(posts: list, noise: float, num_classes: int, seed: int = 0) -> list:
    """Return copies of labeled posts with labels flipped w.p. ``noise``."""
    from dataclasses import replace

    rng = rng_stream(seed, "synth/label-noise")
    noisy = []
    for post in posts:
        cls = post.label.class_index
        if rng.random() < noise:
            others = [c for c in range(num_classes) if c != cls]
            cls = others[int(rng.integers(len(others)))]
        noisy.append(replace(post, label=Label(class_index=cls)))
    return noisy


def repeated_sentence_records(
    n_posts: int = 50,
    n_distinct: int = 8,
    tokens_per_sentence: int = 6,
    seed: int = 0,
) -> list:
    """A tiny corpus of recurring sentences, memorizable by MLM training."""
    rng = rng_stream(seed, "synth/repeated")
    sentences = []
    for s in range(n_distinct):
        words = [f"s{s}w{int(rng.integers(40))}" for _ in range(tokens_per_sentence)]
        sentences.append(" ".join(words))
    return [
        _record(f"p{i}", f"user{i % 3}", f"thread{i % 5}", sentences[i % n_distinct])
        for i in range(n_posts)
    ]


def separable_labeled_records(
    n_posts: int = 50,
    num_classes: int = 3,
    tokens_per_post: int = 6,
    class_tokens: int = 20,
    seed: int = 0,
) -> list:
    """Labeled posts whose classes use disjoint token pools."""
    rng = rng_stream(seed, "synth/separable")
    records = []
    for i in range(n_posts):
        cls = i % num_classes
        words = [f"c{cls}w{int(rng.integers(class_tokens))}" for _ in range(tokens_per_post)]
        records.append(
            _record(
                f"p{i}",
                f"user{i % 5}",
                f"thread{i % 7}",
                " ".join(words),
                label={"class": cls},
            )
        )
    return records


def scored_records(n_posts: int = 60, seed: int = 0) -> list:
    """Regression-labeled posts: score tracks the mix of two token pools."""
    rng = rng_stream(seed, "synth/scored")
    records = []
    for i in range(n_posts):
        score = float(rng.uniform(-1.0, 1.0))
        hot = (score + 1.0) / 2.0
        words = []
        for _ in range(8):
            pool = "hot" if rng.random() < hot else "cold"
            words.append(f"{pool}{int(rng.integers(15))}")
        records.append(
            _record(
                f"p{i}",
                f"user{i % 6}",
                f"thread{i % 9}",
                " ".join(words),
                label={"score": round(score, 4)},
            )
        )
    return records
