"""Metrics, significance testing, few-shot curves, and context-bucketed F1.

Pure computations over prediction/gold sequences. Conventions: classes with
no support in either predictions or golds contribute F1 = 0 to the macro
average; regression predictions are clamped to the label range [-1, 1]
before the error metrics, with unclamped values reported alongside.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .rng import rng_stream
from .social_graph import SocialGraph

DEFAULT_USER_BUCKETS = (("0", 0, 0), ("1-10", 1, 10), (">10", 11, None))
DEFAULT_THREAD_BUCKETS = (("0", 0, 0), ("1-5", 1, 5), (">5", 6, None))


def _paired(preds, golds):
    if len(preds) != len(golds):
        raise ValueError(f"length mismatch: {len(preds)} predictions, {len(golds)} golds")
    if len(preds) == 0:
        raise ValueError("empty inputs")
    return list(preds), list(golds)


def accuracy(preds, golds) -> float:
    preds, golds = _paired(preds, golds)
    return sum(p == g for p, g in zip(preds, golds)) / len(golds)


def confusion_matrix(preds, golds, num_classes: int) -> np.ndarray:
    preds, golds = _paired(preds, golds)
    matrix = np.zeros((num_classes, num_classes), dtype=int)
    for p, g in zip(preds, golds):
        if not (0 <= p < num_classes and 0 <= g < num_classes):
            raise ValueError(f"label outside [0, {num_classes}): pred={p}, gold={g}")
        matrix[g, p] += 1
    return matrix


def _f1_from_counts(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def per_class_f1(preds, golds, num_classes: int) -> list:
    matrix = confusion_matrix(preds, golds, num_classes)
    out = []
    for c in range(num_classes):
        tp = int(matrix[c, c])
        fp = int(matrix[:, c].sum() - tp)
        fn = int(matrix[c, :].sum() - tp)
        out.append(_f1_from_counts(tp, fp, fn))
    return out


def macro_f1(preds, golds, num_classes: int) -> float:
    return float(np.mean(per_class_f1(preds, golds, num_classes)))


def binary_f1(preds, golds, positive_class: int) -> float:
    preds, golds = _paired(preds, golds)
    tp = sum(p == positive_class and g == positive_class for p, g in zip(preds, golds))
    fp = sum(p == positive_class and g != positive_class for p, g in zip(preds, golds))
    fn = sum(p != positive_class and g == positive_class for p, g in zip(preds, golds))
    return _f1_from_counts(tp, fp, fn)


def mse_metric(preds, golds) -> float:
    preds, golds = _paired(preds, golds)
    return float(np.mean((np.asarray(preds, float) - np.asarray(golds, float)) ** 2))


def mae_metric(preds, golds) -> float:
    preds, golds = _paired(preds, golds)
    return float(np.mean(np.abs(np.asarray(preds, float) - np.asarray(golds, float))))


def _midranks(pooled: np.ndarray) -> np.ndarray:
    order = np.argsort(pooled, kind="stable")
    ranks = np.empty(len(pooled), dtype=float)
    i = 0
    while i < len(pooled):
        j = i
        while j + 1 < len(pooled) and pooled[order[j + 1]] == pooled[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _exact_u_pvalue(doubled_ranks: list, n_a: int, observed_u: float) -> float:
    """Two-sided exact p by enumerating every assignment of pooled ranks.

    Dynamic program over (#items assigned to sample a, doubled rank sum);
    doubling makes midranks integral.
    """
    n = len(doubled_ranks)
    max_sum = sum(doubled_ranks)
    ways = np.zeros((n_a + 1, max_sum + 1), dtype=float)
    ways[0, 0] = 1.0
    for r in doubled_ranks:
        for k in range(min(n_a, n) - 1, -1, -1):
            row = ways[k]
            ways[k + 1, r:] += row[: max_sum + 1 - r]
    total = math.comb(n, n_a)
    mean_u = n_a * (n - n_a) / 2.0
    offset = n_a * (n_a + 1) / 2.0
    threshold = abs(observed_u - mean_u) - 1e-9
    hits = 0.0
    for s in range(max_sum + 1):
        count = ways[n_a, s]
        if count and abs(s / 2.0 - offset - mean_u) >= threshold:
            hits += count
    return min(1.0, hits / total)


def mann_whitney_u(sample_a, sample_b) -> tuple:
    """Rank-sum test statistic and two-sided p.

    Exact enumeration when the pooled size is at most 20; above that, the
    normal approximation with tie correction and continuity correction.
    """
    a = np.asarray(list(sample_a), dtype=float)
    b = np.asarray(list(sample_b), dtype=float)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both samples must be non-empty")
    n_a, n_b = len(a), len(b)
    pooled = np.concatenate([a, b])
    ranks = _midranks(pooled)
    u_stat = float(ranks[:n_a].sum() - n_a * (n_a + 1) / 2.0)
    n = n_a + n_b
    if n <= 20:
        doubled = [int(round(2 * r)) for r in ranks]
        return u_stat, _exact_u_pvalue(doubled, n_a, u_stat)
    mean_u = n_a * n_b / 2.0
    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_term = float(((tie_counts**3) - tie_counts).sum())
    var_u = n_a * n_b / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if var_u <= 0:
        return u_stat, 1.0
    diff = u_stat - mean_u
    corrected = max(abs(diff) - 0.5, 0.0)
    z = corrected / math.sqrt(var_u)
    p = 2.0 * (1.0 - 0.5 * (1.0 + math.erf(z / math.sqrt(2.0))))
    return u_stat, min(1.0, p)


@dataclass
class MetricsReport:
    task: str
    n_examples: int
    accuracy: Optional[float] = None
    macro_f1: Optional[float] = None
    per_class_f1: Optional[list] = None
    mse: Optional[float] = None
    mae: Optional[float] = None
    raw_mse: Optional[float] = None
    raw_mae: Optional[float] = None
    context_breakdown: Optional[dict] = None
    fewshot_points: Optional[list] = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"task": self.task, "n_examples": self.n_examples}
        for name in (
            "accuracy",
            "macro_f1",
            "per_class_f1",
            "mse",
            "mae",
            "raw_mse",
            "raw_mae",
            "context_breakdown",
            "fewshot_points",
        ):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        out.update(self.extra)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def classification_report(preds, golds, num_classes: int) -> MetricsReport:
    f1s = per_class_f1(preds, golds, num_classes)
    return MetricsReport(
        task="classification",
        n_examples=len(golds),
        accuracy=accuracy(preds, golds),
        macro_f1=float(np.mean(f1s)),
        per_class_f1=f1s,
    )


def regression_report(preds, golds) -> MetricsReport:
    preds, golds = _paired(preds, golds)
    clamped = np.clip(np.asarray(preds, float), -1.0, 1.0)
    return MetricsReport(
        task="regression",
        n_examples=len(golds),
        mse=mse_metric(clamped, golds),
        mae=mae_metric(clamped, golds),
        raw_mse=mse_metric(preds, golds),
        raw_mae=mae_metric(preds, golds),
    )


def fewshot_curve(
    config,
    fractions,
    trainer: Callable,
    train_set,
    eval_set,
    metric_fn: Callable,
    seeds=None,
) -> list:
    """Train on uniform subsets of the training set and measure each run.

    ``trainer(config, subset, eval_set)`` returns predictions for
    ``eval_set``; ``metric_fn(preds, eval_set)`` scores them. Returns one
    point per (fraction, seed).
    """
    from .sampling import fewshot_subsample

    seeds = list(seeds) if seeds is not None else [config.seed]
    points = []
    for fraction in fractions:
        if not 0.0 < fraction <= 1.0:
            raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
        for seed in seeds:
            rng = rng_stream(seed, f"fewshot/{fraction:.6f}")
            subset = fewshot_subsample(train_set, fraction, rng)
            run_config = config.replace(seed=seed)
            try:
                preds = trainer(run_config, subset, eval_set)
            except Exception as exc:
                raise RuntimeError(f"few-shot trainer failed at fraction {fraction}: {exc}") from exc
            points.append(
                {"fraction": fraction, "metric": float(metric_fn(preds, eval_set)), "seed": seed}
            )
    return points


def write_fewshot_csv(points, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fraction", "metric", "seed"])
        for point in points:
            writer.writerow([point["fraction"], point["metric"], point["seed"]])


def _bucket_of(value: int, buckets) -> Optional[str]:
    for label, lo, hi in buckets:
        if value >= lo and (hi is None or value <= hi):
            return label
    return None


def context_bucket_f1(
    preds,
    golds,
    graph: SocialGraph,
    test_posts,
    num_classes: int,
    user_buckets=DEFAULT_USER_BUCKETS,
    thread_buckets=DEFAULT_THREAD_BUCKETS,
) -> dict:
    """Macro-F1 grouped by how much user/thread context each test post has.

    Context size is the number of other posts by the same author (user
    axis) or in the same thread (thread axis). Empty buckets are omitted.
    """
    preds, golds = _paired(preds, golds)
    ids = [p.id if hasattr(p, "id") else p for p in test_posts]
    if len(ids) != len(preds):
        raise ValueError("test_posts must align with predictions")
    missing = [pid for pid in ids if pid not in graph.posts]
    if missing:
        raise ValueError(f"test posts not in graph: {missing}")

    def sizes(pid):
        post = graph.posts[pid]
        return (
            len(graph.user_index[post.author]) - 1,
            len(graph.thread_index[post.thread]) - 1,
        )

    breakdown = {"user": {}, "thread": {}}
    for axis, buckets, selector in (
        ("user", user_buckets, 0),
        ("thread", thread_buckets, 1),
    ):
        groups: dict = {}
        for pid, p, g in zip(ids, preds, golds):
            label = _bucket_of(sizes(pid)[selector], buckets)
            if label is None:
                raise ValueError(f"context size {sizes(pid)[selector]} falls outside the buckets")
            groups.setdefault(label, ([], []))
            groups[label][0].append(p)
            groups[label][1].append(g)
        for label, _, _ in buckets:
            if label not in groups:
                continue  # empty buckets are absent, not zero
            bucket_preds, bucket_golds = groups[label]
            breakdown[axis][label] = {
                "n": len(bucket_golds),
                "macro_f1": macro_f1(bucket_preds, bucket_golds, num_classes),
                "confusion": confusion_matrix(bucket_preds, bucket_golds, num_classes).tolist(),
            }
    return breakdown
