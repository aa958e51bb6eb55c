"""Finite-difference verification of autograd gradients."""

from __future__ import annotations

import copy
from typing import Callable, Sequence

import numpy as np
import torch

from .context import ContextBundle
from .network import FiDTransformer
from .training import collate, compute_loss

DENOM_FLOOR = 1e-8


def check_gradients(loss_fn: Callable[[], torch.Tensor], params: Sequence[torch.Tensor], eps: float = 1e-4,
                    n_samples: int = 200, seed: int = 0) -> float:
    """Max relative error between autograd and central differences.

    ``n_samples`` entries are drawn uniformly (without replacement) from the
    flattened parameters. Relative error is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if not 1e-5 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-5, 1e-3], got {eps}")
    params = list(params)
    for p in params:
        p.grad = None
    loss_fn().backward()
    analytic = [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p) for p in params]

    sizes = np.array([p.numel() for p in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    picks = rng.choice(offsets[-1], size=min(n_samples, int(offsets[-1])), replace=False)

    worst = 0.0
    with torch.no_grad():
        for flat in np.sort(picks):
            k = int(np.searchsorted(offsets, flat, side="right") - 1)
            idx = int(flat - offsets[k])
            view = params[k].view(-1)
            orig = view[idx].item()
            view[idx] = orig + eps
            up = loss_fn().item()
            view[idx] = orig - eps
            down = loss_fn().item()
            view[idx] = orig
            numeric = (up - down) / (2 * eps)
            a = analytic[k].view(-1)[idx].item()
            err = abs(a - numeric) / max(abs(a), abs(numeric), DENOM_FLOOR)
            worst = max(worst, err)
    return worst


def gradient_check(model: FiDTransformer, bundles: ContextBundle | Sequence[ContextBundle],
                   eps: float = 1e-4, n_samples: int = 200, seed: int = 0) -> float:
    """Check d(total loss)/d(params) of a float64 copy of ``model`` on ``bundles``."""
    if isinstance(bundles, ContextBundle):
        bundles = [bundles]
    m = copy.deepcopy(model).double()
    batch = collate(bundles, m.cfg)
    return check_gradients(lambda: compute_loss(m, batch).total, list(m.parameters()), eps, n_samples, seed)
