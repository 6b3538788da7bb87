"""Run configuration: every hyperparameter the pipeline consumes.

Config files are flat ``key = value`` lines with a TOML-like surface
(strings quoted, booleans true/false, lists in brackets, ``#`` comments).
A small bundled reader parses them so runs work on any Python >= 3.10.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Optional

from .errors import ConfigError

PHASES = ("cp", "ua", "cr")


@dataclass
class TrainConfig:
    # training schedule
    phases: list = field(default_factory=lambda: list(PHASES))
    epochs_cp: int = 3
    epochs_ua: int = 3
    epochs_cr: int = 10
    batch_size: int = 48
    seed: int = 2021
    optimizer: str = "adam"
    lr_encoder: float = 3e-6
    lr_head: float = 2e-5
    # objectives
    task: str = "classification"
    num_classes: int = 3  # classes, or proxy clusters for regression
    mix_weight: float = 0.5  # blend between task loss and auxiliary loss
    num_negatives: int = 8  # sampled users per contrastive anchor
    thread_context_budget: int = 4
    user_context_budget: int = 4
    mask_prob: float = 0.15
    temperature: float = 1.0
    robust_ua: bool = False
    ua_early_stop: bool = False
    ua_val_fraction: float = 0.1
    ua_patience: int = 2
    # encoder profile
    encoder_profile: str = "toy"
    embed_dim: int = 32
    num_layers: int = 2
    num_heads: int = 4
    vocab_size: int = 1024
    max_seq_len: int = 128
    # ingestion
    max_user_posts: Optional[int] = None
    strip_emoji: bool = False

    def validate(self) -> "TrainConfig":
        errors = []
        if not self.phases or any(p not in PHASES for p in self.phases):
            errors.append(f"phases: must be a non-empty subset of {list(PHASES)}, got {self.phases}")
        for name in ("epochs_cp", "epochs_ua", "epochs_cr"):
            if getattr(self, name) < 0:
                errors.append(f"{name}: must be >= 0")
        if self.batch_size < 1:
            errors.append("batch_size: must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            errors.append(f"optimizer: must be 'adam' or 'sgd', got {self.optimizer!r}")
        for name in ("lr_encoder", "lr_head"):
            if getattr(self, name) < 0:
                errors.append(f"{name}: must be >= 0")
        if self.task not in ("classification", "regression"):
            errors.append(f"task: must be 'classification' or 'regression', got {self.task!r}")
        if self.num_classes < 1:
            errors.append("num_classes: must be >= 1")
        if not 0.0 < self.mix_weight < 1.0:
            errors.append(f"mix_weight: must lie in (0, 1), got {self.mix_weight}")
        if self.num_negatives < 0:
            errors.append("num_negatives: must be >= 0")
        if self.thread_context_budget < 0 or self.user_context_budget < 0:
            errors.append("context budgets: must be >= 0")
        if not 0.0 < self.mask_prob < 1.0:
            errors.append(f"mask_prob: must lie in (0, 1), got {self.mask_prob}")
        if self.temperature <= 0:
            errors.append("temperature: must be > 0")
        if not 0.0 < self.ua_val_fraction < 1.0:
            errors.append("ua_val_fraction: must lie in (0, 1)")
        if self.ua_patience < 1:
            errors.append("ua_patience: must be >= 1")
        if self.encoder_profile != "toy":
            errors.append(f"encoder_profile: only 'toy' is configurable, got {self.encoder_profile!r}")
        if self.embed_dim < 8:
            errors.append("embed_dim: must be >= 8")
        if self.embed_dim % self.num_heads != 0:
            errors.append("embed_dim: must be divisible by num_heads")
        if self.num_layers < 1 or self.num_heads < 1:
            errors.append("num_layers/num_heads: must be >= 1")
        if self.vocab_size < 8:
            errors.append("vocab_size: must be >= 8")
        if self.max_seq_len < 1:
            errors.append("max_seq_len: must be >= 1")
        if self.max_user_posts is not None and self.max_user_posts < 1:
            errors.append("max_user_posts: must be >= 1 or unset")
        if errors:
            raise ConfigError(errors)
        return self

    def with_overrides(self, overrides: dict) -> "TrainConfig":
        return _from_mapping({**self.to_dict(), **overrides})

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def replace(self, **kwargs) -> "TrainConfig":
        return replace(self, **kwargs)


_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(name: str, value, errors: list):
    if name in ("phases",):
        if not isinstance(value, list):
            errors.append(f"{name}: expected a list, got {value!r}")
            return value
        return [str(v) for v in value]
    if name == "max_user_posts":
        if value in (None, "none"):
            return None
        if isinstance(value, bool) or not isinstance(value, int):
            errors.append(f"{name}: expected an integer or none, got {value!r}")
            return None
        return value
    if name in ("robust_ua", "ua_early_stop", "strip_emoji"):
        if not isinstance(value, bool):
            errors.append(f"{name}: expected true/false, got {value!r}")
            return False
        return value
    if name in ("task", "optimizer", "encoder_profile"):
        if not isinstance(value, str):
            errors.append(f"{name}: expected a string, got {value!r}")
            return ""
        return value
    if name in (
        "lr_encoder",
        "lr_head",
        "mix_weight",
        "mask_prob",
        "temperature",
        "ua_val_fraction",
    ):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errors.append(f"{name}: expected a number, got {value!r}")
            return 0.0
        return float(value)
    # everything else is an integer field
    if isinstance(value, bool) or not isinstance(value, int):
        errors.append(f"{name}: expected an integer, got {value!r}")
        return 0
    return value


def _from_mapping(mapping: dict) -> TrainConfig:
    errors = []
    kwargs = {}
    for key, value in mapping.items():
        if key not in _FIELD_TYPES:
            errors.append(f"{key}: unknown configuration key")
            continue
        kwargs[key] = _coerce(key, value, errors)
    if errors:
        raise ConfigError(errors)
    return TrainConfig(**kwargs).validate()


def parse_value(text: str):
    """Parse one literal: quoted string, boolean, number, list, or none."""
    text = text.strip()
    if not text:
        raise ValueError("empty value")
    if text.startswith("[") and text.endswith("]"):
        inner = text[1:-1].strip()
        if not inner:
            return []
        return [parse_value(part) for part in _split_list(inner)]
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    if text == "true":
        return True
    if text == "false":
        return False
    if text == "none":
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        raise ValueError(f"unparseable value {text!r}") from None


def _split_list(inner: str) -> list:
    parts, depth, quote, current = [], 0, None, []
    for ch in inner:
        if quote:
            current.append(ch)
            if ch == quote:
                quote = None
            continue
        if ch in "\"'":
            quote = ch
            current.append(ch)
        elif ch == "[":
            depth += 1
            current.append(ch)
        elif ch == "]":
            depth -= 1
            current.append(ch)
        elif ch == "," and depth == 0:
            parts.append("".join(current))
            current = []
        else:
            current.append(ch)
    if current:
        parts.append("".join(current))
    return [p for p in (part.strip() for part in parts) if p]


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines into a mapping."""
    mapping = {}
    errors = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip() if not _hash_inside_quotes(raw) else raw.strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {line_no}: expected 'key = value', got {raw.strip()!r}")
            continue
        key, _, value = line.partition("=")
        key = key.strip()
        try:
            mapping[key] = parse_value(value)
        except ValueError as exc:
            errors.append(f"line {line_no}: {key}: {exc}")
    if errors:
        raise ConfigError(errors)
    return mapping


def _hash_inside_quotes(line: str) -> bool:
    hash_pos = line.find("#")
    if hash_pos < 0:
        return False
    return line[:hash_pos].count('"') % 2 == 1 or line[:hash_pos].count("'") % 2 == 1


def load_config(path=None, overrides: Optional[dict] = None) -> TrainConfig:
    """Build a validated TrainConfig from an optional file plus overrides."""
    mapping = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            mapping.update(parse_config_text(fh.read()))
    mapping.update(overrides or {})
    return _from_mapping(mapping)


def parse_set_override(item: str) -> tuple:
    """Parse one ``--set key=value`` argument; bare words count as strings."""
    if "=" not in item:
        raise ConfigError([f"--set {item!r}: expected key=value"])
    key, _, value = item.partition("=")
    key = key.strip()
    try:
        parsed = parse_value(value)
    except ValueError:
        parsed = value.strip()
    return key, parsed
