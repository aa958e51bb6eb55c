"""Encoder-decoder transformer with Fusion-in-Decoder and a relevance head."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from ..preprocess import PAD_ID
from .config import ModelConfig

_NEG = -1e9  # finite mask value: fully padded slots must not produce NaNs


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.o = nn.Linear(d_model, d_model)

    def _split(self, x: Tensor) -> Tensor:
        b, t, _ = x.shape
        return x.view(b, t, self.n_heads, self.d_head).transpose(1, 2)

    def forward(self, x: Tensor, mem: Tensor, mask: Tensor | None = None) -> Tensor:
        """``mask`` is boolean, broadcastable to (batch, query, key); True = attend."""
        q, k, v = self._split(self.q(x)), self._split(self.k(mem)), self._split(self.v(mem))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.d_head)
        if mask is not None:
            scores = scores.masked_fill(~mask.unsqueeze(1), _NEG)
        out = scores.softmax(-1) @ v
        b, _, t, _ = out.shape
        return self.o(out.transpose(1, 2).reshape(b, t, -1))


class FeedForward(nn.Module):
    def __init__(self, d_model: int, ffn_dim: int):
        super().__init__()
        self.up = nn.Linear(d_model, ffn_dim)
        self.down = nn.Linear(ffn_dim, d_model)

    def forward(self, x):
        # tanh-GELU is smooth everywhere, which keeps finite differences honest
        return self.down(F.gelu(self.up(x), approximate="tanh"))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.attn = MultiHeadAttention(cfg.d_model, cfg.n_heads)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg.d_model, cfg.ffn_dim)

    def forward(self, x, mask):
        h = self.norm1(x)
        x = x + self.attn(h, h, mask)
        return x + self.ffn(self.norm2(x))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads)
        self.norm3 = nn.LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg.d_model, cfg.ffn_dim)

    def forward(self, y, self_mask, mem, mem_mask):
        h = self.norm1(y)
        y = y + self.self_attn(h, h, self_mask)
        y = y + self.cross_attn(self.norm2(y), mem, mem_mask)
        return y + self.ffn(self.norm3(y))


class FiDTransformer(nn.Module):
    """Each slot is encoded on its own with positions restarting at 0; the
    decoder cross-attends over the row-wise concatenation of all slot outputs.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_model
        self.embed = nn.Embedding(cfg.vocab_size, d)
        self.enc_pos = nn.Embedding(cfg.segment_len, d)
        self.dec_pos = nn.Embedding(cfg.max_target_len + 1, d)
        self.encoder = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.n_enc_layers))
        self.enc_norm = nn.LayerNorm(d)
        self.decoder = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.n_dec_layers))
        self.dec_norm = nn.LayerNorm(d)
        self.out_proj = nn.Linear(d, cfg.vocab_size)
        self.relevance = nn.Sequential(nn.Linear(d, d), nn.Tanh(), nn.Linear(d, 1))
        self._init_weights()

    def _init_weights(self):
        for name, p in self.named_parameters():
            if p.dim() > 1:
                nn.init.normal_(p, std=0.02 if "embed" in name or "pos" in name else 1.0 / math.sqrt(p.shape[1]))
            elif name.endswith("bias"):
                nn.init.zeros_(p)

    # encoder -------------------------------------------------------------

    def encode(self, tokens: Tensor, mask: Tensor) -> Tensor:
        """Encode a batch of slots: ``tokens`` (N, T) -> (N, T, d)."""
        t = tokens.shape[1]
        if t > self.cfg.segment_len:
            raise ValueError(f"segment of length {t} exceeds segment_len={self.cfg.segment_len}")
        pos = torch.arange(t, device=tokens.device)
        x = self.embed(tokens) + self.enc_pos(pos)
        attn_mask = mask[:, None, :].expand(-1, t, -1)
        for layer in self.encoder:
            x = layer(x, attn_mask)
        return self.enc_norm(x)

    def fuse_batch(self, slot_tokens: Tensor, slot_mask: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """``slot_tokens`` (B, S, T) -> fused memory (B, S*T, d), its mask, and per-slot outputs."""
        b, s, t = slot_tokens.shape
        enc = self.encode(slot_tokens.reshape(b * s, t), slot_mask.reshape(b * s, t))
        enc = enc.view(b, s, t, -1)
        return enc.reshape(b, s * t, -1), slot_mask.reshape(b, s * t), enc

    # relevance -----------------------------------------------------------

    def relevance_logits(self, pooled: Tensor) -> Tensor:
        return self.relevance(pooled).squeeze(-1)

    @staticmethod
    def mean_pool(enc: Tensor, mask: Tensor) -> Tensor:
        m = mask.to(enc.dtype).unsqueeze(-1)
        return (enc * m).sum(-2) / m.sum(-2).clamp(min=1.0)

    # decoder -------------------------------------------------------------

    def decode(self, dec_in: Tensor, memory: Tensor, mem_mask: Tensor) -> Tensor:
        """Teacher-forced decoder pass: (B, U) input ids -> (B, U, vocab) logits."""
        u = dec_in.shape[1]
        pos = torch.arange(u, device=dec_in.device)
        y = self.embed(dec_in) + self.dec_pos(pos)
        causal = torch.ones(u, u, dtype=torch.bool, device=dec_in.device).tril()
        self_mask = causal.unsqueeze(0) & (dec_in != PAD_ID).unsqueeze(1) | torch.eye(
            u, dtype=torch.bool, device=dec_in.device
        ).unsqueeze(0)
        cross_mask = mem_mask[:, None, :]
        for layer in self.decoder:
            y = layer(y, self_mask, memory, cross_mask)
        return self.out_proj(self.dec_norm(y))
