"""Loss, training, adaptation and greedy decoding for :class:`FiDTransformer`."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor

from ..preprocess import BOS_ID, EOS_ID, PAD_ID, Segment, Vocabulary, tokenize
from ..syntax import ast_token_seq, parse_source
from .config import ModelConfig
from .context import ContextBundle, single_segment_bundle
from .network import FiDTransformer

log = logging.getLogger(__name__)

IGNORE = -100


def torch_dtype(cfg: ModelConfig) -> torch.dtype:
    return torch.float64 if cfg.dtype == "float64" else torch.float32


def init_model(cfg: ModelConfig) -> FiDTransformer:
    torch.manual_seed(cfg.seed)
    return FiDTransformer(cfg).to(torch_dtype(cfg))


# ---------------------------------------------------------------------------
# single-sample building blocks


def encode_segment(model: FiDTransformer, seg: Segment | Sequence[int]) -> Tensor:
    """Encoder output for one slot, shape (len(seg), d_model)."""
    ids = seg.tokens if isinstance(seg, Segment) else tuple(seg)
    if len(ids) > model.cfg.segment_len:
        raise ValueError(f"segment of length {len(ids)} exceeds segment_len={model.cfg.segment_len}")
    d = model.cfg.d_model
    dtype = model.embed.weight.dtype
    if not ids:
        return torch.zeros(0, d, dtype=dtype)
    tokens = torch.tensor([ids], dtype=torch.long)
    return model.encode(tokens, torch.ones_like(tokens, dtype=torch.bool))[0]


def fuse(embeddings: Sequence[Tensor]) -> Tensor:
    """Row-wise concatenation of slot embeddings in slot order."""
    if not embeddings:
        raise ValueError("nothing to fuse")
    width = {e.shape[1] for e in embeddings}
    if len(width) != 1:
        raise ValueError(f"slot embeddings disagree on d_model: {sorted(width)}")
    return torch.cat(list(embeddings), dim=0)


def relevance_forward(model: FiDTransformer, pair_embeddings: Sequence[Tensor]) -> Tensor:
    """Scores p_k in (0, 1), one per pair, from mean-pooled pair embeddings."""
    if not pair_embeddings:
        return torch.zeros(0, dtype=model.embed.weight.dtype)
    d = model.cfg.d_model
    pooled = torch.stack([e.mean(0) if len(e) else e.new_zeros(d) for e in pair_embeddings])
    return torch.sigmoid(model.relevance_logits(pooled))


def relevance_loss(p, g) -> float:
    """Summed binary cross-entropy over pairs, computed from probabilities."""
    return float(sum(-(gk * math.log(pk) + (1 - gk) * math.log(1 - pk)) for pk, gk in zip(p, g)))


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    slot_tokens: Tensor  # (B, S, T)
    slot_mask: Tensor  # (B, S, T)
    dec_in: Tensor  # (B, U)
    labels: Tensor  # (B, U)
    pair_index: Tensor  # (P, 2): (sample, slot)
    pair_labels: Tensor  # (P,)

    @property
    def size(self) -> int:
        return self.slot_tokens.shape[0]


def collate(bundles: Sequence[ContextBundle], cfg: ModelConfig, with_targets: bool = True) -> Batch:
    slots = [b.slots() or [Segment()] for b in bundles]
    S = max(len(s) for s in slots)
    T = max(1, max(len(seg) for s in slots for seg in s))
    if T > cfg.segment_len:
        raise ValueError(f"segment of length {T} exceeds segment_len={cfg.segment_len}")
    B = len(bundles)
    slot_tokens = torch.full((B, S, T), PAD_ID, dtype=torch.long)
    slot_mask = torch.zeros((B, S, T), dtype=torch.bool)
    for i, ss in enumerate(slots):
        for j, seg in enumerate(ss):
            if len(seg):
                slot_tokens[i, j, : len(seg)] = torch.tensor(seg.tokens)
                slot_mask[i, j, : len(seg)] = True

    pair_index, pair_labels = [], []
    for i, b in enumerate(bundles):
        for s, g in zip(b.pair_slot_indices(), b.pair_labels):
            pair_index.append((i, s))
            pair_labels.append(g)

    if with_targets:
        ys = []
        for b in bundles:
            if not b.target_tokens:
                raise ValueError(f"bundle {b.sample_id!r} has an empty target")
            ys.append(list(b.target_tokens[: cfg.max_target_len]))
        U = max(len(y) for y in ys) + 1
        dec_in = torch.full((B, U), PAD_ID, dtype=torch.long)
        labels = torch.full((B, U), IGNORE, dtype=torch.long)
        for i, y in enumerate(ys):
            dec_in[i, : len(y) + 1] = torch.tensor([BOS_ID, *y])
            labels[i, : len(y) + 1] = torch.tensor([*y, EOS_ID])
    else:
        dec_in = torch.full((B, 1), BOS_ID, dtype=torch.long)
        labels = torch.full((B, 1), IGNORE, dtype=torch.long)
    return Batch(
        slot_tokens,
        slot_mask,
        dec_in,
        labels,
        torch.tensor(pair_index, dtype=torch.long).reshape(-1, 2),
        torch.tensor(pair_labels, dtype=torch.long),
    )


# ---------------------------------------------------------------------------
# loss


@dataclass
class LossBreakdown:
    l_repair: Tensor
    l_relevance: Tensor
    total: Tensor

    def as_floats(self) -> dict[str, float]:
        return {
            "l_repair": float(self.l_repair.detach()),
            "l_relevance": float(self.l_relevance.detach()),
            "total": float(self.total.detach()),
        }


def compute_loss(model: FiDTransformer, batch: Batch | Sequence[ContextBundle],
                 use_relevance: bool | None = None) -> LossBreakdown:
    """Multi-task loss, averaged over the samples of the batch.

    Per sample: repair = mean token NLL of the target (teacher forcing, eos
    included); relevance = summed binary cross-entropy over the sample's pairs.
    """
    if not isinstance(batch, Batch):
        batch = collate(batch, model.cfg)
    if use_relevance is None:
        use_relevance = model.cfg.use_relevance
    memory, mem_mask, enc = model.fuse_batch(batch.slot_tokens, batch.slot_mask)
    logits = model.decode(batch.dec_in, memory, mem_mask)
    nll = F.cross_entropy(logits.transpose(1, 2), batch.labels, ignore_index=IGNORE, reduction="none")
    n_tok = (batch.labels != IGNORE).sum(1).to(nll.dtype)
    l_repair = (nll.sum(1) / n_tok).mean()

    if use_relevance and len(batch.pair_labels):
        b_idx, s_idx = batch.pair_index[:, 0], batch.pair_index[:, 1]
        pooled = model.mean_pool(enc[b_idx, s_idx], batch.slot_mask[b_idx, s_idx])
        z = model.relevance_logits(pooled)
        bce = F.binary_cross_entropy_with_logits(z, batch.pair_labels.to(z.dtype), reduction="none")
        per_sample = torch.zeros(batch.size, dtype=z.dtype).index_add(0, b_idx, bce)
        l_relevance = per_sample.mean()
    else:
        l_relevance = torch.zeros((), dtype=l_repair.dtype)
    return LossBreakdown(l_repair, l_relevance, l_repair + l_relevance)


# ---------------------------------------------------------------------------
# decoding


@torch.no_grad()
def generate(model: FiDTransformer, bundles: Sequence[ContextBundle], max_len: int,
             batch_size: int = 64) -> list[tuple[int, ...]]:
    """Greedy decoding; ties resolve to the lowest token id, eos ends a sequence."""
    was_training = model.training
    model.eval()
    max_len = min(max_len, model.cfg.max_target_len + 1)
    out: list[tuple[int, ...]] = []
    for start in range(0, len(bundles), batch_size):
        chunk = bundles[start : start + batch_size]
        if max_len <= 0:
            out.extend(() for _ in chunk)
            continue
        batch = collate(chunk, model.cfg, with_targets=False)
        memory, mem_mask, _ = model.fuse_batch(batch.slot_tokens, batch.slot_mask)
        ys = batch.dec_in
        done = torch.zeros(len(chunk), dtype=torch.bool)
        for _ in range(max_len):
            logits = model.decode(ys, memory, mem_mask)[:, -1]
            nxt = logits.argmax(-1)  # first maximum = lowest id
            nxt = torch.where(done, torch.full_like(nxt, PAD_ID), nxt)
            ys = torch.cat([ys, nxt[:, None]], dim=1)
            done |= nxt == EOS_ID
            if bool(done.all()):
                break
        for row in ys[:, 1:].tolist():
            seq = []
            for t in row:
                if t in (EOS_ID, PAD_ID):
                    break
                seq.append(t)
            out.append(tuple(seq))
    model.train(was_training)
    return out


@torch.no_grad()
def relevance_scores(model: FiDTransformer, bundles: Sequence[ContextBundle],
                     batch_size: int = 64) -> list[np.ndarray]:
    model.eval()
    scores: list[np.ndarray] = []
    for start in range(0, len(bundles), batch_size):
        chunk = bundles[start : start + batch_size]
        batch = collate(chunk, model.cfg, with_targets=False)
        _, _, enc = model.fuse_batch(batch.slot_tokens, batch.slot_mask)
        p = torch.empty(0)
        if len(batch.pair_labels):
            b_idx, s_idx = batch.pair_index[:, 0], batch.pair_index[:, 1]
            p = torch.sigmoid(model.relevance_logits(model.mean_pool(enc[b_idx, s_idx], batch.slot_mask[b_idx, s_idx])))
        offset = 0
        for b in chunk:
            n = len(b.pair_segments)
            scores.append(p[offset : offset + n].double().numpy())
            offset += n
    return scores


def exact_match_rate(model: FiDTransformer, bundles: Sequence[ContextBundle], max_len: int | None = None) -> float:
    if not bundles:
        return 0.0
    if max_len is None:
        max_len = max(len(b.target_tokens) for b in bundles) + 1
    preds = generate(model, bundles, max_len)
    hits = sum(p == tuple(b.target_tokens[: model.cfg.max_target_len]) for p, b in zip(preds, bundles))
    return hits / len(bundles)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    trace: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int | None = None
    best_valid_em: float | None = None


def train(model: FiDTransformer, bundles: Sequence[ContextBundle], cfg: ModelConfig | None = None,
          valid: Sequence[ContextBundle] | None = None, *, epochs: int | None = None,
          learning_rate: float | None = None, max_steps: int | None = None,
          on_step: Callable[[dict], None] | None = None) -> TrainResult:
    """Train in place with AdamW; keep the checkpoint with the best validation EM.

    Without ``valid`` the final parameters are kept. ``on_step`` receives each
    step record and may return True to stop early. Raises FloatingPointError on
    a non-finite loss, naming the step.
    """
    if not bundles:
        raise ValueError("cannot train on an empty dataset")
    cfg = cfg or model.cfg
    epochs = cfg.epochs if epochs is None else epochs
    lr = cfg.learning_rate if learning_rate is None else learning_rate
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    opt = torch.optim.AdamW(model.parameters(), lr=lr, weight_decay=cfg.weight_decay)
    result = TrainResult()
    best_state = None
    step = 0
    stop = False
    model.train()
    for epoch in range(epochs):
        order = rng.permutation(len(bundles))
        sums = {"l_repair": 0.0, "l_relevance": 0.0, "total": 0.0}
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            if max_steps is not None and step >= max_steps:
                break
            batch = collate([bundles[i] for i in order[start : start + cfg.batch_size]], cfg)
            loss = compute_loss(model, batch, cfg.use_relevance)
            if not torch.isfinite(loss.total):
                raise FloatingPointError(f"non-finite loss at step {step} (epoch {epoch})")
            opt.zero_grad()
            loss.total.backward()
            if cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            opt.step()
            rec = {"step": step, **loss.as_floats()}
            result.trace.append(rec)
            for k in sums:
                sums[k] += rec[k]
            n_batches += 1
            step += 1
            if on_step is not None and on_step(rec):
                stop = True
                break
        if n_batches == 0:
            break
        stats = {"epoch": epoch, **{k: v / n_batches for k, v in sums.items()}}
        if valid:
            em = exact_match_rate(model, valid)
            model.train()
            stats["valid_em"] = em
            if result.best_valid_em is None or em > result.best_valid_em:
                result.best_valid_em, result.best_epoch = em, epoch
                best_state = copy.deepcopy(model.state_dict())
        result.epochs.append(stats)
        log.info("epoch %d: %s", epoch, stats)
        if stop:
            break
    if best_state is not None:
        model.load_state_dict(best_state)
    elif result.epochs:
        result.best_epoch = result.epochs[-1]["epoch"]
    return result


# ---------------------------------------------------------------------------
# adaptation on a bug-fix corpus


def adaptation_kinds(n: int) -> list[str]:
    """Even positions feed raw code, odd positions the AST node sequence."""
    return ["code" if i % 2 == 0 else "ast" for i in range(n)]


def adaptation_bundles(corpus: Sequence[tuple[str, str]], vocab: Vocabulary, L: int) -> list[ContextBundle]:
    out = []
    for i, ((buggy, fixed), kind) in enumerate(zip(corpus, adaptation_kinds(len(corpus)))):
        if kind == "code":
            src = tokenize(buggy, vocab)
        else:
            src = ast_token_seq(parse_source(buggy), vocab)
        out.append(single_segment_bundle(src, tokenize(fixed, vocab), L, kind, sample_id=f"adapt-{i}"))
    return out


def adapt_pretrain(model: FiDTransformer, corpus: Sequence[tuple[str, str]], vocab: Vocabulary,
                   cfg: ModelConfig | None = None, **train_kwargs) -> TrainResult:
    """Continue pre-training on (buggy, fixed) pairs, one truncated slot per sample."""
    cfg = cfg or model.cfg
    bundles = adaptation_bundles(corpus, vocab, cfg.segment_len)
    train_kwargs.setdefault("epochs", cfg.adapt_epochs)
    train_kwargs.setdefault("learning_rate", cfg.adapt_learning_rate)
    return train(model, bundles, cfg, **train_kwargs)
