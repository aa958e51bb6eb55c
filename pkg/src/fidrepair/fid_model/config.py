from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass


@dataclass
class ModelConfig:
    """Hyper-parameters of the encoder-decoder and its training loop.

    ``segment_len`` (L) bounds every encoder slot and ``max_segments`` (K) bounds
    how many slots one sample may occupy, so the decoder sees at most K*L rows.
    """

    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    ffn_dim: int = 128
    segment_len: int = 512
    max_segments: int = 10
    max_target_len: int = 512
    seed: int = 0
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    batch_size: int = 64
    epochs: int = 20
    adapt_learning_rate: float = 2e-5
    adapt_epochs: int = 5
    grad_clip: float = 1.0
    use_relevance: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("vocab_size", "d_model", "n_heads", "n_enc_layers", "n_dec_layers", "ffn_dim",
                     "segment_len", "max_segments", "max_target_len", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.epochs < 0 or self.adapt_epochs < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model config field(s): {', '.join(sorted(unknown))}")
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]
