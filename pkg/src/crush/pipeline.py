"""Training phases and inference.

Phase order is fixed: continual MLM pre-training (cp) -> user-anchored
contrastive self-supervision (ua) -> context-regularized fine-tuning (cr);
any prefix can be skipped through the config. The ua phase touches encoder
parameters only and reads labels only in robust mode; inference never sees
the graph.

Each phase writes a checkpoint per epoch (when given an output directory)
that also carries the optimizer state and the loss curve, so an interrupted
phase resumes into exactly the trajectory of the uninterrupted run.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace as dc_replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from . import losses
from .config import TrainConfig
from .errors import AnchorSkipped
from .model import (
    CrushModel,
    load_checkpoint,
    mlm_loss,
    mlm_mask,
    predict_class,
    save_checkpoint,
)
from .rng import rng_stream
from .sampling import (
    proxy_class_labels,
    sample_aux_post_set,
    sample_context_set,
    sample_post_set,
    sample_user_set,
)
from .social_graph import Label, Post, SocialGraph


@dataclass
class PhaseReport:
    phase: str
    loss_curve: list = field(default_factory=list)
    val_curve: list = field(default_factory=list)
    epochs_run: int = 0
    skipped_anchors: int = 0
    empty_contexts: int = 0
    skipped_batches: int = 0
    wall_time: float = 0.0
    checkpoint_path: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "phase": self.phase,
            "loss_curve": self.loss_curve,
            "val_curve": self.val_curve,
            "epochs_run": self.epochs_run,
            "skipped_anchors": self.skipped_anchors,
            "empty_contexts": self.empty_contexts,
            "skipped_batches": self.skipped_batches,
            "wall_time": self.wall_time,
            "checkpoint_path": self.checkpoint_path,
        }


def build_model(config: TrainConfig) -> CrushModel:
    return CrushModel.build_toy(
        embed_dim=config.embed_dim,
        num_layers=config.num_layers,
        num_heads=config.num_heads,
        vocab_size=config.vocab_size,
        max_seq_len=config.max_seq_len,
        num_classes=config.num_classes,
        task=config.task,
        seed=config.seed,
    )


def _make_optimizer(config: TrainConfig, model: CrushModel, encoder_only: bool = False):
    groups = [{"params": list(model.encoder.parameters()), "lr": config.lr_encoder}]
    if not encoder_only:
        groups.append({"params": list(model.head.parameters()), "lr": config.lr_head})
    if config.optimizer == "adam":
        return torch.optim.Adam(groups)
    return torch.optim.SGD(groups)


def _chunks(items, size: int):
    for start in range(0, len(items), size):
        yield items[start : start + size]


def _step_value(loss: torch.Tensor) -> float:
    value = float(loss)
    if not np.isfinite(value):
        raise RuntimeError(f"non-finite training loss {value}")
    return value


def _epoch_checkpoint(out_dir, phase: str, epoch: int) -> Path:
    return Path(out_dir) / f"{phase}_epoch{epoch:03d}.pt"


def _save_epoch(out_dir, phase, epoch, model, optimizer, report: PhaseReport) -> str:
    path = _epoch_checkpoint(out_dir, phase, epoch)
    extra = {
        "phase": phase,
        "epoch": epoch,
        "optimizer_state": optimizer.state_dict(),
        "loss_curve": list(report.loss_curve),
        "val_curve": list(report.val_curve),
        "skipped_anchors": report.skipped_anchors,
        "empty_contexts": report.empty_contexts,
        "skipped_batches": report.skipped_batches,
    }
    save_checkpoint(model, path, extra=extra)
    return str(path)


def _try_resume(out_dir, phase, model, optimizer, report: PhaseReport) -> int:
    """Load the newest epoch checkpoint of this phase; returns the next epoch."""
    if out_dir is None:
        return 0
    found = sorted(Path(out_dir).glob(f"{phase}_epoch*.pt"))
    if not found:
        return 0
    extra = load_checkpoint(found[-1], model)
    optimizer.load_state_dict(extra["optimizer_state"])
    report.loss_curve = list(extra["loss_curve"])
    report.val_curve = list(extra.get("val_curve", []))
    report.skipped_anchors = int(extra.get("skipped_anchors", 0))
    report.empty_contexts = int(extra.get("empty_contexts", 0))
    report.skipped_batches = int(extra.get("skipped_batches", 0))
    report.checkpoint_path = str(found[-1])
    return int(extra["epoch"]) + 1


def run_phase_cp(
    config: TrainConfig,
    corpus: SocialGraph,
    model: CrushModel,
    out_dir=None,
    resume: bool = False,
) -> PhaseReport:
    """Continual pre-training: minimize the MLM objective over the corpus posts."""
    if len(corpus) == 0:
        raise ValueError("corpus is empty")
    start = time.perf_counter()
    tokenizer = model.encoder.tokenizer
    posts = list(corpus.posts.values())
    seqs = [tokenizer.encode(p.text, config.max_seq_len) for p in posts]
    optimizer = _make_optimizer(config, model, encoder_only=True)
    report = PhaseReport(phase="cp")
    first_epoch = _try_resume(out_dir, "cp", model, optimizer, report) if resume else 0

    for epoch in range(first_epoch, config.epochs_cp):
        rng = rng_stream(config.seed, f"cp/epoch{epoch}")
        order = rng.permutation(len(seqs))
        for batch_idx in _chunks(order, config.batch_size):
            masked = []
            for i in batch_idx:
                mb = mlm_mask(seqs[i], config.mask_prob, rng, tokenizer)
                if len(mb.positions) > 0:
                    masked.append(mb)
            if not masked:
                report.skipped_batches += 1
                continue
            width = max(len(mb.input_ids) for mb in masked)
            ids = torch.full((len(masked), width), tokenizer.PAD, dtype=torch.long)
            real = torch.zeros((len(masked), width), dtype=torch.bool)
            for row, mb in enumerate(masked):
                n = len(mb.input_ids)
                ids[row, :n] = torch.as_tensor(mb.input_ids)
                real[row, :n] = True
            probs = model.encoder.token_probs(ids, real)
            total = torch.zeros((), dtype=torch.float64)
            n_masked = 0
            for row, mb in enumerate(masked):
                total = total + mlm_loss(probs[row], mb) * len(mb.positions)
                n_masked += len(mb.positions)
            loss = total / n_masked
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            report.loss_curve.append(_step_value(loss))
        report.epochs_run = epoch + 1
        if out_dir is not None:
            report.checkpoint_path = _save_epoch(out_dir, "cp", epoch, model, optimizer, report)
    report.wall_time = time.perf_counter() - start
    return report


def _proxy_relabel(config: TrainConfig, train_set: list) -> list:
    """Replace regression scores with clustered proxy class labels."""
    scores = []
    for post in train_set:
        if post.label is None or post.label.score is None:
            raise ValueError(f"post {post.id!r} lacks the score label required for proxy classes")
        scores.append(post.label.score)
    rng = rng_stream(config.seed, "ua/proxy-labels")
    proxies = proxy_class_labels(scores, config.num_classes, rng)
    return [
        dc_replace(post, label=Label(class_index=cls)) for post, cls in zip(train_set, proxies)
    ]


def run_phase_ua(
    config: TrainConfig,
    graph: SocialGraph,
    model: CrushModel,
    train_set: Optional[list] = None,
    out_dir=None,
    resume: bool = False,
) -> PhaseReport:
    """User-anchored contrastive pre-training. Updates encoder parameters only.

    In robust mode each anchor comes from the labeled training set and the
    contrastive loss is blended with a class-contrastive auxiliary loss on
    the same anchor; for regression tasks the class labels are clustered
    proxies of the scores, computed once per run.
    """
    k = config.num_negatives
    if k >= graph.user_count:
        raise ValueError(f"num_negatives={k} must be smaller than user count {graph.user_count}")

    if config.robust_ua:
        if not train_set:
            raise ValueError("robust_ua requires a labeled train_set")
        if config.task == "regression":
            train_set = _proxy_relabel(config, train_set)
        by_class: dict = {}
        for post in train_set:
            if post.label is None or not post.label.is_class:
                raise ValueError(f"post {post.id!r} lacks a class label")
            if post.id not in graph.posts:
                raise ValueError(f"training post {post.id!r} is not in the graph")
            by_class.setdefault(post.label.class_index, []).append(post)
        for cls, members in sorted(by_class.items()):
            if len(members) < 2:
                raise ValueError(f"class {cls} has fewer than 2 labeled posts")
        anchors = list(train_set)
        aux_pool = list(train_set)
    else:
        anchors = list(graph.posts.values())
        aux_pool = None

    eligible = [p for p in anchors if len(graph.user_index.get(p.author, ())) >= 2]
    start = time.perf_counter()
    report = PhaseReport(phase="ua")
    report.skipped_anchors = len(anchors) - len(eligible)
    optimizer = _make_optimizer(config, model, encoder_only=True)
    first_epoch = _try_resume(out_dir, "ua", model, optimizer, report) if resume else 0

    val_anchors: list = []
    train_anchors = eligible
    if config.ua_early_stop and len(eligible) >= 4:
        split_rng = rng_stream(config.seed, "ua/val-split")
        order = split_rng.permutation(len(eligible))
        n_val = max(1, int(np.ceil(config.ua_val_fraction * len(eligible))))
        val_anchors = [eligible[i] for i in order[:n_val]]
        train_anchors = [eligible[i] for i in order[n_val:]]

    def anchor_losses(batch: list, rng, grad: bool) -> list:
        """Contrastive loss per anchor; one encoder pass for the whole batch."""
        plans = []
        for anchor in batch:
            try:
                user_set = sample_user_set(graph, anchor, k, rng)
                post_set = sample_post_set(graph, anchor, user_set, rng)
            except AnchorSkipped:
                report.skipped_anchors += 1
                continue
            texts = [anchor.text] + [graph.post(pid).text for pid in post_set.posts]
            aux_count = 0
            if config.robust_ua:
                aux_set = sample_aux_post_set(aux_pool, anchor, rng)
                texts += [graph.post(pid).text for pid in aux_set.posts]
                aux_count = len(aux_set.posts)
            plans.append((texts, aux_count))
        if not plans:
            return []
        flat = [t for texts, _ in plans for t in texts]
        with torch.enable_grad() if grad else torch.no_grad():
            emb = model.encode_batch(flat)
            out = []
            offset = 0
            for texts, aux_count in plans:
                n_main = len(texts) - aux_count
                z_anchor = emb[offset]
                z_cands = emb[offset + 1 : offset + n_main]
                loss = losses.contrastive_nll(z_anchor, z_cands, config.temperature)
                if aux_count:
                    z_aux = emb[offset + n_main : offset + n_main + aux_count]
                    aux = losses.contrastive_nll(z_anchor, z_aux, config.temperature)
                    loss = losses.robust_ua_loss(loss, aux, config.mix_weight)
                out.append(loss)
                offset += len(texts)
        return out

    best_val = float("inf")
    rising = 0
    for epoch in range(first_epoch, config.epochs_ua):
        rng = rng_stream(config.seed, f"ua/epoch{epoch}")
        order = rng.permutation(len(train_anchors))
        for batch_idx in _chunks(order, config.batch_size):
            batch = [train_anchors[i] for i in batch_idx]
            per_anchor = anchor_losses(batch, rng, grad=True)
            if not per_anchor:
                report.skipped_batches += 1
                continue
            loss = torch.stack(per_anchor).mean()
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            report.loss_curve.append(_step_value(loss))
        report.epochs_run = epoch + 1
        if val_anchors:
            val_rng = rng_stream(config.seed, f"ua/val-epoch{epoch}")
            val_losses = anchor_losses(val_anchors, val_rng, grad=False)
            val = float(torch.stack(val_losses).mean()) if val_losses else 0.0
            report.val_curve.append(val)
        if out_dir is not None:
            report.checkpoint_path = _save_epoch(out_dir, "ua", epoch, model, optimizer, report)
        if val_anchors:
            val = report.val_curve[-1]
            if val < best_val - 1e-12:
                best_val = val
                rising = 0
            else:
                rising += 1
                if rising >= config.ua_patience:
                    break
    report.wall_time = time.perf_counter() - start
    return report


def _check_labels(train_set: list, task: str) -> None:
    if not train_set:
        raise ValueError("train_set is empty")
    for post in train_set:
        if post.label is None:
            raise ValueError(f"post {post.id!r} is unlabeled")
        if task == "classification" and not post.label.is_class:
            raise ValueError(f"post {post.id!r} carries a score, expected a class label")
        if task == "regression" and post.label.is_class:
            raise ValueError(f"post {post.id!r} carries a class, expected a score label")


def _task_loss(model: CrushModel, output: torch.Tensor, label: Label) -> torch.Tensor:
    if model.task == "classification":
        return losses.cross_entropy(output, label.class_index)
    return losses.mse(label.score, output)


def _finetune_loop(
    config: TrainConfig,
    train_set: list,
    model: CrushModel,
    graph: Optional[SocialGraph],
    phase: str,
    out_dir,
    resume: bool,
) -> PhaseReport:
    """Shared loop for fine-tuning with (cr) and without (plain) context."""
    _check_labels(train_set, config.task)
    with_context = phase == "cr"
    if with_context:
        for post in train_set:
            if post.id not in graph.posts:
                raise ValueError(f"training post {post.id!r} is not in the graph")
    epochs = config.epochs_cr
    start = time.perf_counter()
    report = PhaseReport(phase=phase)
    optimizer = _make_optimizer(config, model)
    first_epoch = _try_resume(out_dir, phase, model, optimizer, report) if resume else 0

    for epoch in range(first_epoch, epochs):
        rng = rng_stream(config.seed, f"{phase}/epoch{epoch}")
        order = rng.permutation(len(train_set))
        for batch_idx in _chunks(order, config.batch_size):
            batch = [train_set[i] for i in batch_idx]
            contexts = []
            texts = []
            for anchor in batch:
                group = [anchor.text]
                if with_context:
                    ctx = sample_context_set(
                        graph,
                        anchor,
                        config.thread_context_budget,
                        config.user_context_budget,
                        rng,
                    )
                    group += [graph.post(pid).text for pid in ctx.posts]
                contexts.append(len(group) - 1)
                texts.extend(group)
            emb = model.encode_batch(texts)
            outputs = model.classify(emb) if model.task == "classification" else model.regress(emb)
            per_anchor = []
            offset = 0
            for anchor, m in zip(batch, contexts):
                task_loss = _task_loss(model, outputs[offset], anchor.label)
                if with_context:
                    ctx_out = outputs[offset + 1 : offset + 1 + m]
                    if m == 0:
                        report.empty_contexts += 1
                    if model.task == "classification":
                        aux = losses.contextual_ce(ctx_out, anchor.label.class_index)
                        combined = losses.contextual_classification_loss(
                            task_loss, aux, config.mix_weight
                        )
                    else:
                        aux = losses.contextual_mse(ctx_out, anchor.label.score)
                        combined = losses.contextual_regression_loss(
                            task_loss, aux, config.mix_weight
                        )
                    per_anchor.append(combined)
                else:
                    per_anchor.append(task_loss)
                offset += 1 + m
            loss = torch.stack(per_anchor).mean()
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            report.loss_curve.append(_step_value(loss))
        report.epochs_run = epoch + 1
        if out_dir is not None:
            report.checkpoint_path = _save_epoch(out_dir, phase, epoch, model, optimizer, report)
    report.wall_time = time.perf_counter() - start
    return report


def run_phase_cr(
    config: TrainConfig,
    graph: SocialGraph,
    train_set: list,
    model: CrushModel,
    out_dir=None,
    resume: bool = False,
) -> PhaseReport:
    """Context-regularized fine-tuning: the anchor's task loss blended with
    the mean loss of its thread/timeline neighbors predicted toward the
    anchor's own label. Updates encoder and head."""
    return _finetune_loop(config, train_set, model, graph, "cr", out_dir, resume)


def finetune_plain(
    config: TrainConfig,
    train_set: list,
    model: CrushModel,
    out_dir=None,
    resume: bool = False,
) -> PhaseReport:
    """Standard fine-tuning on the task loss alone (the baseline rows)."""
    return _finetune_loop(config, train_set, model, None, "finetune", out_dir, resume)


def infer(model: CrushModel, text: str):
    """Context-free prediction for one text: class index or raw score.

    Takes no graph argument on purpose; inference must not depend on the
    social context.
    """
    with torch.no_grad():
        e = model.encode(text)
        if model.task == "classification":
            return predict_class(model.classify(e))
        return float(model.regress(e))


def predict_texts(model: CrushModel, texts: list, batch_size: int = 64) -> list:
    """Batched predictions matching infer() for every item."""
    out = []
    with torch.no_grad():
        for chunk in _chunks(list(texts), batch_size):
            outputs = model.forward_texts(chunk)
            if model.task == "classification":
                out.extend(predict_class(row) for row in outputs)
            else:
                out.extend(float(v) for v in outputs)
    return out
