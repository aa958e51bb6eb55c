from .config import ModelConfig
from .context import (
    ContextBundle,
    build_context,
    build_contexts,
    knowledge_for,
    select_slots,
    single_segment_bundle,
    vocab_texts,
)
from .estimator import FiDRepairModel
from .gradcheck import check_gradients, gradient_check
from .network import FiDTransformer
from .training import (
    LossBreakdown,
    adapt_pretrain,
    adaptation_kinds,
    collate,
    compute_loss,
    encode_segment,
    exact_match_rate,
    fuse,
    generate,
    init_model,
    relevance_forward,
    relevance_loss,
    relevance_scores,
    train,
)

__all__ = [
    "ContextBundle",
    "FiDRepairModel",
    "FiDTransformer",
    "LossBreakdown",
    "ModelConfig",
    "adapt_pretrain",
    "adaptation_kinds",
    "build_context",
    "build_contexts",
    "check_gradients",
    "collate",
    "compute_loss",
    "encode_segment",
    "exact_match_rate",
    "fuse",
    "generate",
    "gradient_check",
    "init_model",
    "knowledge_for",
    "relevance_forward",
    "relevance_loss",
    "relevance_scores",
    "select_slots",
    "single_segment_bundle",
    "train",
    "vocab_texts",
]
