from __future__ import annotations

import inspect
from typing import Sequence

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..preprocess import TokenSeq, Vocabulary
from ..validation import check_bundles
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelConfig
from .context import ContextBundle, select_slots
from .training import (
    TrainResult,
    adapt_pretrain,
    exact_match_rate,
    generate,
    init_model,
    relevance_scores,
    train,
)


class FiDRepairModel(BaseEstimator):
    """Fusion-in-Decoder repair model with the usual ``fit``/``predict``/``score`` surface.

    ``X`` is a sequence of :class:`ContextBundle`; targets live inside the
    bundles, so ``y`` is ignored. Every constructor argument is a
    :class:`ModelConfig` field and round-trips through ``get_params``.

    With ``warm_start=True``, ``fit`` and ``adapt`` continue from the current
    weights (e.g. fine-tuning after ``adapt``); otherwise they re-initialise.
    """

    def __init__(self, vocab_size=512, d_model=64, n_heads=4, n_enc_layers=2, n_dec_layers=2,
                 ffn_dim=128, segment_len=512, max_segments=10, max_target_len=512, seed=0,
                 learning_rate=1e-4, weight_decay=0.01, batch_size=64, epochs=20,
                 adapt_learning_rate=2e-5, adapt_epochs=5, grad_clip=1.0, use_relevance=True,
                 dtype="float32", warm_start=False):
        self.vocab_size = vocab_size
        self.d_model = d_model
        self.n_heads = n_heads
        self.n_enc_layers = n_enc_layers
        self.n_dec_layers = n_dec_layers
        self.ffn_dim = ffn_dim
        self.segment_len = segment_len
        self.max_segments = max_segments
        self.max_target_len = max_target_len
        self.seed = seed
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.adapt_learning_rate = adapt_learning_rate
        self.adapt_epochs = adapt_epochs
        self.grad_clip = grad_clip
        self.use_relevance = use_relevance
        self.dtype = dtype
        self.warm_start = warm_start

    @property
    def config(self) -> ModelConfig:
        names = inspect.signature(type(self).__init__).parameters
        return ModelConfig(**{k: getattr(self, k) for k in names if k not in ("self", "warm_start")})

    def _ensure_model(self, cfg: ModelConfig):
        model = getattr(self, "model_", None)
        if not self.warm_start or model is None or _arch(model.cfg) != _arch(cfg):
            self.model_ = init_model(cfg)
        else:
            model.cfg = cfg

    def _budget(self, X) -> list[ContextBundle]:
        X = check_bundles(X, self.segment_len)
        return [select_slots(b, self.max_segments) for b in X]

    def adapt(self, corpus: Sequence[tuple[str, str]], vocab: Vocabulary, **train_kwargs) -> "FiDRepairModel":
        cfg = self.config
        self._ensure_model(cfg)
        self.adapt_result_ = adapt_pretrain(self.model_, corpus, vocab, cfg, **train_kwargs)
        return self

    def fit(self, X, y=None, X_val=None, **train_kwargs) -> "FiDRepairModel":
        cfg = self.config
        self._ensure_model(cfg)
        X = self._budget(X)
        X_val = self._budget(X_val) if X_val else None
        result: TrainResult = train(self.model_, X, cfg, X_val, **train_kwargs)
        self.loss_trace_ = result.trace
        self.history_ = result.epochs
        self.best_epoch_ = result.best_epoch
        return self

    def predict(self, X, max_len: int | None = None) -> list[TokenSeq]:
        check_is_fitted(self, "model_")
        X = self._budget(X)
        max_len = self.max_target_len if max_len is None else max_len
        return [TokenSeq(t) for t in generate(self.model_, X, max_len, self.batch_size)]

    def predict_relevance(self, X):
        check_is_fitted(self, "model_")
        return relevance_scores(self.model_, self._budget(X), self.batch_size)

    def score(self, X, y=None) -> float:
        """Exact-match rate of greedy predictions against the bundle targets."""
        check_is_fitted(self, "model_")
        return exact_match_rate(self.model_, self._budget(X))

    def save(self, path, extra: dict | None = None) -> None:
        check_is_fitted(self, "model_")
        save_checkpoint(path, self.model_.state_dict(), self.model_.cfg, extra)

    @classmethod
    def load(cls, path) -> "FiDRepairModel":
        state, cfg, _ = load_checkpoint(path)
        est = cls(**cfg.to_dict(), warm_start=True)
        est.model_ = init_model(cfg)
        est.model_.load_state_dict(state)
        return est


_ARCH_FIELDS = ("vocab_size", "d_model", "n_heads", "n_enc_layers", "n_dec_layers", "ffn_dim",
                "segment_len", "max_target_len", "dtype")


def _arch(cfg: ModelConfig) -> tuple:
    return tuple(getattr(cfg, f) for f in _ARCH_FIELDS)
