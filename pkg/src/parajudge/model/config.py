"""Model architecture configuration."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

from .tokenizer import VOCAB_SIZE


@dataclass(frozen=True)
class ModelConfig:
    """Shapes and seed of a decoder-only transformer.

    The default is the desk-scale setup: it trains in minutes on a CPU while
    exercising every code path. All values are configurable; smaller variants
    drive the parameter-scale comparison.
    """

    n_layers: int = 4
    d_model: int = 128
    n_heads: int = 4
    d_ffn: int = 512
    context_len: int = 512
    vocab_size: int = VOCAB_SIZE
    seed: int = 0

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.context_len < 8:
            raise ValueError(f"context_len must be >= 8, got {self.context_len}")
        for name in ("n_layers", "d_model", "n_heads", "d_ffn", "vocab_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def config_hash(self) -> str:
        """Stable digest identifying architecture + init seed; adapters bind to it."""
        payload = json.dumps(asdict(self), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:16]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)
