"""Training objectives as pure scalar functions of embeddings and outputs.

Conventions, fixed once for the whole package:

* Contrastive denominators sum over ALL candidates including the positive
  (standard InfoNCE), which keeps every loss nonnegative.
* Log-domain computations are max-subtracted (logsumexp).
* An empty context set contributes zero to the contextual terms, so the
  combined loss degenerates to mix_weight * task loss; callers count how
  often that happens rather than rescaling silently.

Everything returns a 0-dim torch tensor so gradients flow when inputs are
attached to the graph; plain lists are accepted for convenience.
"""

from __future__ import annotations

import torch


def _tensor(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(x, dtype=torch.float64)


def check_mix_weight(mix_weight: float) -> float:
    if not 0.0 < float(mix_weight) < 1.0:
        raise ValueError(f"mix weight must lie in (0, 1), got {mix_weight}")
    return float(mix_weight)


def contrastive_nll(anchor, candidates, temperature: float = 1.0) -> torch.Tensor:
    """Contrastive negative log-likelihood of the positive at index 0.

    ``candidates`` is an (n, d) stack whose first row is the positive; the
    score of each candidate is its inner product with ``anchor``. With a
    single candidate the loss is identically zero. ``temperature`` divides
    the scores and defaults to off (1.0).
    """
    anchor = _tensor(anchor)
    candidates = _tensor(candidates)
    if candidates.ndim != 2 or anchor.ndim != 1:
        raise ValueError("expected anchor (d,) and candidates (n, d)")
    if candidates.shape[1] != anchor.shape[0]:
        raise ValueError(
            f"dimension mismatch: anchor {anchor.shape[0]}, candidates {candidates.shape[1]}"
        )
    if candidates.shape[0] < 1:
        raise ValueError("need at least one candidate")
    scores = candidates @ anchor
    if temperature != 1.0:
        scores = scores / temperature
    return torch.logsumexp(scores, dim=0) - scores[0]


def robust_ua_loss(ua, aux, mix_weight: float) -> torch.Tensor:
    """Convex combination of the user-anchored and auxiliary contrastive losses."""
    lam = check_mix_weight(mix_weight)
    return lam * _tensor(ua) + (1.0 - lam) * _tensor(aux)


def cross_entropy(logits, target: int) -> torch.Tensor:
    """Negative log of the softmax probability of ``target``."""
    logits = _tensor(logits)
    if logits.ndim != 1:
        raise ValueError("expected a 1-D logits vector")
    if not 0 <= target < logits.shape[0]:
        raise ValueError(f"target {target} outside [0, {logits.shape[0]})")
    return torch.logsumexp(logits, dim=0) - logits[target]


def contextual_ce(context_logits, target: int) -> torch.Tensor:
    """Mean cross-entropy of the context posts' logits toward the anchor's label.

    Every neighbor's prediction is pulled toward the anchor's class. An
    empty context contributes zero.
    """
    context_logits = _tensor(context_logits)
    if context_logits.numel() == 0:
        return torch.zeros((), dtype=torch.float64)
    if context_logits.ndim != 2:
        raise ValueError("expected (m, K) context logits")
    losses = [cross_entropy(row, target) for row in context_logits]
    return torch.stack(losses).mean()


def contextual_classification_loss(ce, cce, mix_weight: float) -> torch.Tensor:
    """mix_weight * task CE + (1 - mix_weight) * contextual CE."""
    lam = check_mix_weight(mix_weight)
    return lam * _tensor(ce) + (1.0 - lam) * _tensor(cce)


def mse(target, prediction) -> torch.Tensor:
    """Squared error; arrays give the batch mean."""
    diff = _tensor(target) - _tensor(prediction)
    return (diff**2).mean()


def contextual_mse(context_preds, target) -> torch.Tensor:
    """Mean squared deviation of context predictions from the anchor's score.

    An empty context contributes zero.
    """
    context_preds = _tensor(context_preds)
    if context_preds.numel() == 0:
        return torch.zeros((), dtype=torch.float64)
    if context_preds.ndim != 1:
        raise ValueError("expected a 1-D vector of context predictions")
    return ((_tensor(target) - context_preds) ** 2).mean()


def contextual_regression_loss(mse_value, cmse, mix_weight: float) -> torch.Tensor:
    """mix_weight * task MSE + (1 - mix_weight) * contextual MSE."""
    lam = check_mix_weight(mix_weight)
    return lam * _tensor(mse_value) + (1.0 - lam) * _tensor(cmse)
