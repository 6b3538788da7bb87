"""Encoder, heads, and MLM machinery.

Two encoder profiles sit behind one interface: a self-contained toy
transformer (whitespace+hash tokenizer, float64, runs anywhere) and an
adapter slot for a pretrained sentence encoder with a pooled output. The
toy profile is what the test suite trains; the adapter exists so the same
pipeline can drive a real language model.

Embeddings are plain torch tensors of a fixed dimension per model; logits
are length-K tensors.
"""

from __future__ import annotations

import hashlib
import math
import zlib
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .errors import CheckpointError
from .rng import stream_int

CHECKPOINT_VERSION = 1


def head_hidden_dim(embed_dim: int) -> int:
    """Hidden width of the 2-layer head, scaled down from the 768->128 ratio."""
    return max(8, round(embed_dim / 6))


class ToyTokenizer:
    """Whitespace tokenizer with hashed ids. Ids 0..2 are reserved."""

    PAD = 0
    MASK = 1
    NULL = 2  # stands in for text that tokenizes to nothing
    RESERVED = 3

    def __init__(self, vocab_size: int = 1024):
        if vocab_size <= self.RESERVED + 1:
            raise ValueError(f"vocab_size must exceed {self.RESERVED + 1}")
        self.vocab_size = vocab_size

    def token_id(self, token: str) -> int:
        bucket = zlib.crc32(token.encode("utf-8")) % (self.vocab_size - self.RESERVED)
        return self.RESERVED + bucket

    def encode(self, text: str, max_len: int) -> list:
        ids = [self.token_id(t) for t in text.split()[:max_len]]
        return ids or [self.NULL]

    def fingerprint(self) -> str:
        return hashlib.sha256(f"crc32/{self.vocab_size}".encode()).hexdigest()[:16]


@dataclass
class MaskedBatch:
    """One sequence with mask substitutions applied.

    ``targets`` holds the original token ids exactly at ``positions``.
    """

    input_ids: np.ndarray
    positions: np.ndarray
    targets: np.ndarray


def mlm_mask(
    tokens, mask_prob: float, rng: np.random.Generator, tokenizer: ToyTokenizer
) -> MaskedBatch:
    """Corrupt a token sequence for masked-language-model training.

    Each position is selected with probability mask_prob; selected positions
    get the mask token 80% of the time, a random vocabulary token 10%, and
    stay unchanged 10%.
    """
    if not 0.0 < mask_prob < 1.0:
        raise ValueError(f"mask_prob must lie in (0, 1), got {mask_prob}")
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim != 1 or len(ids) == 0:
        raise ValueError("tokens must be a non-empty 1-D sequence")
    selected = rng.random(len(ids)) < mask_prob
    positions = np.flatnonzero(selected)
    targets = ids[positions].copy()
    corrupted = ids.copy()
    action = rng.random(len(positions))
    for idx, pos in enumerate(positions):
        if action[idx] < 0.8:
            corrupted[pos] = tokenizer.MASK
        elif action[idx] < 0.9:
            corrupted[pos] = int(
                rng.integers(tokenizer.RESERVED, tokenizer.vocab_size)
            )
        # else: keep the original token
    return MaskedBatch(input_ids=corrupted, positions=positions, targets=targets)


def mlm_loss(token_probs: torch.Tensor, masked: MaskedBatch) -> torch.Tensor:
    """Mean negative log-likelihood of the original tokens at mask positions.

    ``token_probs`` is the (seq_len, vocab) matrix of predicted token
    distributions for the corrupted sequence.
    """
    if len(masked.positions) == 0:
        raise ValueError("masked batch has no masked positions")
    pos = torch.as_tensor(masked.positions, dtype=torch.long)
    tgt = torch.as_tensor(masked.targets, dtype=torch.long)
    picked = token_probs[pos, tgt]
    return -torch.log(picked).mean()


class _Block(nn.Module):
    """Pre-LN transformer block: self-attention + GELU feed-forward."""

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        if dim % num_heads != 0:
            raise ValueError(f"embed dim {dim} not divisible by {num_heads} heads")
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.ln1 = nn.LayerNorm(dim)
        self.ln2 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.ff = nn.Sequential(nn.Linear(dim, 4 * dim), nn.GELU(), nn.Linear(4 * dim, dim))

    def forward(self, h: torch.Tensor, real_mask: torch.Tensor) -> torch.Tensor:
        bsz, seq, dim = h.shape
        x = self.ln1(h)
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        shape = (bsz, seq, self.num_heads, self.head_dim)
        q = q.view(shape).transpose(1, 2)
        k = k.view(shape).transpose(1, 2)
        v = v.view(shape).transpose(1, 2)
        att = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        att = att.masked_fill(~real_mask[:, None, None, :], float("-inf"))
        att = torch.softmax(att, dim=-1)
        out = (att @ v).transpose(1, 2).reshape(bsz, seq, dim)
        h = h + self.proj(out)
        return h + self.ff(self.ln2(h))


class ToyEncoder(nn.Module):
    """Small bidirectional transformer over hashed tokens, mean-pooled.

    Runs in float64 so finite-difference gradient checks at eps=1e-5 are
    meaningful.
    """

    def __init__(
        self,
        embed_dim: int = 32,
        num_layers: int = 2,
        num_heads: int = 4,
        vocab_size: int = 1024,
        max_seq_len: int = 128,
        seed: int = 0,
    ):
        super().__init__()
        if embed_dim < 8:
            raise ValueError(f"embed_dim must be >= 8, got {embed_dim}")
        self.embed_dim = embed_dim
        self.num_layers = num_layers
        self.num_heads = num_heads
        self.max_seq_len = max_seq_len
        self.seed = seed
        self.tokenizer = ToyTokenizer(vocab_size)
        self.tok_emb = nn.Embedding(vocab_size, embed_dim, padding_idx=ToyTokenizer.PAD)
        self.pos_emb = nn.Parameter(torch.zeros(max_seq_len, embed_dim))
        self.blocks = nn.ModuleList(_Block(embed_dim, num_heads) for _ in range(num_layers))
        self.ln_f = nn.LayerNorm(embed_dim)
        self.double()
        self._init_params(seed)

    def _init_params(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(stream_int(seed, "toy-encoder-init"))
        for name, param in self.named_parameters():
            if "ln" in name or "LayerNorm" in name:
                continue  # LayerNorm keeps its ones/zeros default
            if param.dim() >= 2:
                if "emb" in name:
                    param.data.normal_(0.0, 0.1, generator=gen)
                else:
                    bound = math.sqrt(6.0 / sum(param.shape[-2:]))
                    param.data.uniform_(-bound, bound, generator=gen)
            else:
                param.data.zero_()
        with torch.no_grad():
            self.tok_emb.weight[ToyTokenizer.PAD].zero_()
        self.pos_emb.data.normal_(0.0, 0.1, generator=gen)

    def tokenize_batch(self, texts: list) -> tuple:
        """Pad a batch of texts to a common length; returns (ids, real_mask)."""
        seqs = [self.tokenizer.encode(t, self.max_seq_len) for t in texts]
        width = max(len(s) for s in seqs)
        ids = torch.full((len(seqs), width), ToyTokenizer.PAD, dtype=torch.long)
        mask = torch.zeros((len(seqs), width), dtype=torch.bool)
        for i, s in enumerate(seqs):
            ids[i, : len(s)] = torch.as_tensor(s, dtype=torch.long)
            mask[i, : len(s)] = True
        return ids, mask

    def forward_tokens(self, ids: torch.Tensor, real_mask: torch.Tensor) -> torch.Tensor:
        h = self.tok_emb(ids) + self.pos_emb[: ids.shape[1]]
        for block in self.blocks:
            h = block(h, real_mask)
        return self.ln_f(h)

    def pool(self, hidden: torch.Tensor, real_mask: torch.Tensor) -> torch.Tensor:
        weights = real_mask.to(hidden.dtype)
        return (hidden * weights[..., None]).sum(dim=1) / weights.sum(dim=1, keepdim=True)

    def encode_texts(self, texts: list) -> torch.Tensor:
        ids, mask = self.tokenize_batch(texts)
        return self.pool(self.forward_tokens(ids, mask), mask)

    def token_probs(self, ids: torch.Tensor, real_mask: torch.Tensor) -> torch.Tensor:
        """Per-position vocabulary distributions, tied to the input embedding."""
        hidden = self.forward_tokens(ids, real_mask)
        logits = hidden @ self.tok_emb.weight.t()
        return torch.softmax(logits, dim=-1)

    def config_dict(self) -> dict:
        return {
            "kind": "toy",
            "embed_dim": self.embed_dim,
            "num_layers": self.num_layers,
            "num_heads": self.num_heads,
            "vocab_size": self.tokenizer.vocab_size,
            "max_seq_len": self.max_seq_len,
            "vocab_hash": self.tokenizer.fingerprint(),
            "seed": self.seed,
        }


class PretrainedEncoderAdapter(nn.Module):
    """Adapter slot for an external pooled-output sentence encoder.

    ``module`` is any nn.Module; ``encode_fn(module, texts)`` must return a
    (batch, embed_dim) tensor. Token-level MLM is not available through the
    adapter, so the continual pre-training phase requires the toy profile.
    """

    def __init__(self, module: nn.Module, encode_fn, embed_dim: int):
        super().__init__()
        self.module = module
        self.encode_fn = encode_fn
        self.embed_dim = embed_dim
        self.max_seq_len = getattr(module, "max_seq_len", 128)

    def encode_texts(self, texts: list) -> torch.Tensor:
        out = self.encode_fn(self.module, texts)
        if out.shape[-1] != self.embed_dim:
            raise ValueError(f"adapter produced dim {out.shape[-1]}, expected {self.embed_dim}")
        return out

    def token_probs(self, ids, real_mask):
        raise NotImplementedError("token-level MLM needs the toy profile")

    def config_dict(self) -> dict:
        return {"kind": "adapter", "embed_dim": self.embed_dim}


class PredictionHead(nn.Module):
    """Two fully-connected layers with a ReLU hidden layer."""

    def __init__(self, embed_dim: int, out_dim: int, seed: int = 0):
        super().__init__()
        hidden = head_hidden_dim(embed_dim)
        self.fc1 = nn.Linear(embed_dim, hidden)
        self.fc2 = nn.Linear(hidden, out_dim)
        self.out_dim = out_dim
        self.double()
        gen = torch.Generator().manual_seed(stream_int(seed, "head-init"))
        for layer in (self.fc1, self.fc2):
            bound = math.sqrt(6.0 / (layer.in_features + layer.out_features))
            layer.weight.data.uniform_(-bound, bound, generator=gen)
            layer.bias.data.zero_()

    def forward(self, e: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.relu(self.fc1(e)))


class CrushModel:
    """Encoder + head pair with the task type baked in."""

    def __init__(self, encoder, head: PredictionHead, task: str):
        if task not in ("classification", "regression"):
            raise ValueError(f"unknown task {task!r}")
        self.encoder = encoder
        self.head = head
        self.task = task

    @staticmethod
    def build_toy(
        embed_dim: int = 32,
        num_layers: int = 2,
        num_heads: int = 4,
        vocab_size: int = 1024,
        max_seq_len: int = 128,
        num_classes: int = 3,
        task: str = "classification",
        seed: int = 0,
    ) -> "CrushModel":
        encoder = ToyEncoder(
            embed_dim=embed_dim,
            num_layers=num_layers,
            num_heads=num_heads,
            vocab_size=vocab_size,
            max_seq_len=max_seq_len,
            seed=seed,
        )
        out_dim = num_classes if task == "classification" else 1
        return CrushModel(encoder, PredictionHead(embed_dim, out_dim, seed=seed), task)

    def encode(self, text: str) -> torch.Tensor:
        """Pooled embedding of one text; deterministic for fixed parameters."""
        return self.encoder.encode_texts([text])[0]

    def encode_batch(self, texts: list) -> torch.Tensor:
        return self.encoder.encode_texts(texts)

    def classify(self, e: torch.Tensor) -> torch.Tensor:
        if self.task != "classification":
            raise ValueError("model has a regressor head")
        if e.shape[-1] != self.encoder.embed_dim:
            raise ValueError(
                f"embedding dim {e.shape[-1]} does not match encoder dim "
                f"{self.encoder.embed_dim}"
            )
        return self.head(e)

    def regress(self, e: torch.Tensor) -> torch.Tensor:
        if self.task != "regression":
            raise ValueError("model has a classifier head")
        if e.shape[-1] != self.encoder.embed_dim:
            raise ValueError(
                f"embedding dim {e.shape[-1]} does not match encoder dim "
                f"{self.encoder.embed_dim}"
            )
        return self.head(e).squeeze(-1)

    def forward_texts(self, texts: list) -> torch.Tensor:
        """Head outputs for a batch of texts (logits or scores)."""
        e = self.encode_batch(texts)
        return self.classify(e) if self.task == "classification" else self.regress(e)

    def fingerprint(self) -> dict:
        fp = dict(self.encoder.config_dict())
        fp["task"] = self.task
        fp["out_dim"] = self.head.out_dim
        return fp


def class_probs(v) -> np.ndarray:
    """Softmax with max subtraction; sums to one within 1e-9."""
    logits = np.asarray(
        v.detach().numpy() if isinstance(v, torch.Tensor) else v, dtype=float
    )
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    shifted = np.exp(logits - logits.max())
    return shifted / shifted.sum()


def predict_class(v) -> int:
    """Most likely class; ties resolve to the lowest index."""
    return int(np.argmax(class_probs(v)))


def state_digest(module: nn.Module) -> str:
    """Stable hash of a module's parameters, for bit-identity checks."""
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().numpy().tobytes())
    return h.hexdigest()


def save_checkpoint(model: CrushModel, path, extra: dict | None = None) -> None:
    """Dump encoder+head tensors with a config fingerprint."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "fingerprint": model.fingerprint(),
        "encoder": model.encoder.state_dict(),
        "head": model.head.state_dict(),
        "extra": extra or {},
    }
    torch.save(payload, path)


def _read_checkpoint(path) -> dict:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version in {path}")
    return payload


def load_checkpoint(path, model: CrushModel) -> dict:
    """Restore parameters into ``model``.

    Every architecture field of the fingerprint must match; the recorded
    init seed is provenance only, so checkpoints transfer across run seeds.
    """
    payload = _read_checkpoint(path)
    expected = model.fingerprint()
    saved = dict(payload["fingerprint"])
    mismatched = {
        key: (saved.get(key), expected.get(key))
        for key in set(saved) | set(expected)
        if key != "seed" and saved.get(key) != expected.get(key)
    }
    if mismatched:
        raise CheckpointError(
            f"checkpoint fingerprint mismatch: saved {saved}, model {expected} "
            f"(differ on {sorted(mismatched)})"
        )
    model.encoder.load_state_dict(payload["encoder"])
    model.head.load_state_dict(payload["head"])
    return payload["extra"]


def model_from_checkpoint(path) -> tuple:
    """Rebuild a toy-profile model from a checkpoint; returns (model, extra)."""
    payload = _read_checkpoint(path)
    fp = payload["fingerprint"]
    if fp.get("kind") != "toy":
        raise CheckpointError("only toy-profile checkpoints can be rebuilt standalone")
    model = CrushModel.build_toy(
        embed_dim=fp["embed_dim"],
        num_layers=fp["num_layers"],
        num_heads=fp["num_heads"],
        vocab_size=fp["vocab_size"],
        max_seq_len=fp["max_seq_len"],
        num_classes=fp["out_dim"],
        task=fp["task"],
        seed=fp["seed"],
    )
    model.encoder.load_state_dict(payload["encoder"])
    model.head.load_state_dict(payload["head"])
    return model, payload["extra"]


def param_diff(state_a: dict, state_b: dict) -> list:
    """Element counts that differ per tensor; empty when states are identical."""
    if set(state_a) != set(state_b):
        raise ValueError("state dicts have different keys")
    diffs = []
    for name in sorted(state_a):
        n = int((state_a[name] != state_b[name]).sum())
        if n:
            diffs.append((name, n))
    return diffs
