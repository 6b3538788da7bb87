import numpy as np
import pytest
import torch

from crush import TrainConfig, ingest_posts
from crush.synth import random_post_records

torch.set_num_threads(2)


def make_records(rows):
    """rows: (id, author, thread, text[, label]) tuples -> record dicts."""
    records = []
    for row in rows:
        rec = {
            "id": row[0],
            "author": row[1],
            "thread": row[2],
            "parent": None,
            "text": row[3],
        }
        if len(row) > 4:
            rec["label"] = row[4]
        records.append(rec)
    return records


@pytest.fixture
def tiny_graph():
    return ingest_posts(
        make_records(
            [
                ("a1", "alice", "t1", "red apples every day"),
                ("a2", "alice", "t1", "green apples for me"),
                ("a3", "alice", "t2", "cider season is here"),
                ("b1", "bob", "t1", "pears beat apples"),
                ("b2", "bob", "t2", "a pear a day"),
                ("c1", "carol", "t2", "plums are underrated"),
            ]
        )
    )


@pytest.fixture
def random_graph():
    return ingest_posts(random_post_records(300, n_users=20, n_threads=15, seed=7))


@pytest.fixture
def fast_config():
    return TrainConfig(
        batch_size=8,
        max_seq_len=16,
        embed_dim=16,
        num_layers=2,
        num_heads=4,
        vocab_size=128,
        lr_encoder=1e-3,
        lr_head=3e-3,
        epochs_cp=2,
        epochs_ua=2,
        epochs_cr=3,
        num_negatives=2,
        thread_context_budget=2,
        user_context_budget=2,
        seed=11,
    ).validate()


def assert_within_sigma(count, n, p, sigmas=3.0):
    """Binomial frequency check: |count - np| <= sigmas * sqrt(np(1-p))."""
    mean = n * p
    sigma = np.sqrt(n * p * (1 - p))
    assert abs(count - mean) <= sigmas * sigma, (
        f"count {count} outside {sigmas} sigma of {mean:.1f} (sigma {sigma:.1f})"
    )
