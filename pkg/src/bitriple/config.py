"""Run configuration: a flat ``key = value`` file with typed validation."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

MAPPINGS = ("identity", "uniform", "truncated")
MODES = ("bidirectional", "s2o_only", "o2s_only", "two_step")


@dataclass
class RunConfig:
    train_path: str = ""
    dev_path: str = ""
    test_path: str = ""
    schema_path: str = ""
    annotation: str = "whole_span"
    max_len: int = 100
    encoder: str = "tiny-trainable"
    d_h: int = 32
    encoder_layers: int = 2
    encoder_heads: int = 4
    pretrained: str = "bert-base-cased"
    scheme: str = "zero_one"
    relation_head: str = "biaffine"
    mode: str = "bidirectional"
    base_lr: float = 1.5e-4
    delta: float = 0.0
    mapping: str = "identity"
    one_lr: bool = False
    epochs: int = 100
    patience: int = 10
    batch_size: int = 18
    negative_ratio: float = 1.0
    negative_source: str = "random"
    weight_decay: float = 0.01
    threshold: float = 0.5
    match: str = "exact"
    max_entities: int = 20
    seed: int = 42
    runs: int = 5
    out_dir: str = "runs/default"

    def validate(self) -> "RunConfig":
        choices = {
            "annotation": ("last_token", "whole_span"),
            "encoder": ("tiny-trainable", "pretrained-transformer"),
            "scheme": ("zero_one", "bio"),
            "relation_head": ("biaffine", "linear"),
            "mode": MODES,
            "mapping": MAPPINGS,
            "negative_source": ("random", "model"),
            "match": ("partial", "exact"),
        }
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise ValueError(f"{key} must be one of {allowed}, got {getattr(self, key)!r}")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("delta must lie in [0, 1]")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        for key in ("epochs", "patience", "negative_ratio", "weight_decay"):
            if getattr(self, key) < 0:
                raise ValueError(f"{key} must be non-negative")
        for key in ("batch_size", "runs", "d_h", "max_len", "max_entities"):
            if getattr(self, key) < 1:
                raise ValueError(f"{key} must be at least 1")
        if self.encoder == "tiny-trainable" and self.d_h > 64:
            raise ValueError("tiny-trainable encoder requires d_h <= 64")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: coerce(k, v) for k, v in data.items()}).validate()

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes).validate()

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_dict().items())


def _field_type(name: str) -> type:
    default = {f.name: f.default for f in fields(RunConfig)}[name]
    return type(default)


def coerce(key: str, value):
    kind = _field_type(key)
    if not isinstance(value, str):
        return kind(value)
    if kind is bool:
        lowered = value.strip().lower()
        if lowered not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"{key}: expected a boolean, got {value!r}")
        return lowered in ("true", "1", "yes")
    try:
        return kind(value.strip())
    except ValueError:
        raise ValueError(f"{key}: expected {kind.__name__}, got {value!r}") from None


def parse_config_text(text: str) -> dict:
    data = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        data[key] = value
    return data


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a config file (optional) and apply overrides; flags win over file values."""
    data = parse_config_text(Path(path).read_text(encoding="utf-8")) if path else {}
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig.from_dict(data)
