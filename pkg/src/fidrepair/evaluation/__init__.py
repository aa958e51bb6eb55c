from .metrics import (
    bleu4,
    codebleu,
    codebleu_components,
    dataflow_edges,
    dataflow_match,
    exact_match,
    subtrees,
    syntax_match,
    weighted_ngram_match,
)
from .report import EvalReport, evaluate_predictions, score_sample
from .stats import wilcoxon_signed_rank
from .subgroups import (
    LENGTH_THRESHOLD,
    TOP10_CWE,
    GroupRow,
    GroupSpec,
    SampleInfo,
    frequent_types,
    load_top10,
    partition,
    subgroup_report,
)

__all__ = [
    "EvalReport",
    "GroupRow",
    "GroupSpec",
    "LENGTH_THRESHOLD",
    "SampleInfo",
    "TOP10_CWE",
    "bleu4",
    "codebleu",
    "codebleu_components",
    "dataflow_edges",
    "dataflow_match",
    "evaluate_predictions",
    "exact_match",
    "frequent_types",
    "load_top10",
    "partition",
    "score_sample",
    "subgroup_report",
    "subtrees",
    "syntax_match",
    "weighted_ngram_match",
    "wilcoxon_signed_rank",
]
