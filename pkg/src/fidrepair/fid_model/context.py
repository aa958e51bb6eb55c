"""Assembly of encoder slots ``[I_1..I_n; A_1..A_m; D; E_1..E_k]`` under the K budget."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from ..corpus import RepairSample, annotate_sample
from ..cwe_kb import CweEntry, CweHierarchy, KnowledgeBundle, assemble_knowledge
from ..preprocess import Segment, TokenSeq, Vocabulary, segment_tokens, tokenize
from ..syntax import ast_token_seq, linearize_dfs, parse_source
from .config import ModelConfig


@dataclass(frozen=True)
class ContextBundle:
    code_segments: tuple[Segment, ...]
    ast_segments: tuple[Segment, ...] = ()
    name_segment: Segment | None = None
    pair_segments: tuple[Segment, ...] = ()
    pair_labels: tuple[int, ...] = ()
    target_tokens: tuple[int, ...] = ()
    sample_id: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("code_segments", "ast_segments", "pair_segments", "pair_labels", "target_tokens"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if len(self.pair_labels) != len(self.pair_segments):
            raise ValueError(
                f"{len(self.pair_labels)} labels for {len(self.pair_segments)} pair segments"
            )
        if any(g not in (0, 1) for g in self.pair_labels):
            raise ValueError("pair labels must be 0 or 1")

    def slots(self) -> list[Segment]:
        name = [self.name_segment] if self.name_segment is not None else []
        return [*self.code_segments, *self.ast_segments, *name, *self.pair_segments]

    @property
    def n_slots(self) -> int:
        return len(self.slots())

    def pair_slot_indices(self) -> list[int]:
        start = self.n_slots - len(self.pair_segments)
        return list(range(start, self.n_slots))


def _drop_last(segments: tuple, labels: tuple | None = None, label: int | None = None):
    """Remove the trailing segment (with the given label, when labels are given)."""
    if labels is None:
        return segments[:-1], None
    for i in range(len(segments) - 1, -1, -1):
        if labels[i] == label:
            return segments[:i] + segments[i + 1 :], labels[:i] + labels[i + 1 :]
    return segments, labels


def select_slots(bundle: ContextBundle, K: int) -> ContextBundle:
    """Trim a bundle to at most ``K`` slots.

    Drop order: trailing label-0 pairs, trailing AST segments, trailing label-1
    pairs, trailing code segments. The CWE name slot is never dropped.
    """
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    has_code = any(len(s) for s in bundle.code_segments)
    if bundle.name_segment is not None and K < 2 and has_code:
        raise ValueError(f"K={K} cannot hold both the code and the CWE name")
    code, ast = bundle.code_segments, bundle.ast_segments
    pairs, labels = bundle.pair_segments, bundle.pair_labels
    fixed = 1 if bundle.name_segment is not None else 0

    def total():
        return len(code) + len(ast) + fixed + len(pairs)

    while total() > K and 0 in labels:
        pairs, labels = _drop_last(pairs, labels, 0)
    while total() > K and ast:
        ast = ast[:-1]
    while total() > K and pairs:
        pairs, labels = pairs[:-1], labels[:-1]
    while total() > K and code:
        code = code[:-1]
    return replace(bundle, code_segments=code, ast_segments=ast, pair_segments=pairs, pair_labels=labels)


def build_context(sample: RepairSample, kb_bundle: KnowledgeBundle, cfg: ModelConfig, vocab: Vocabulary,
                  use_ast: bool = True, use_knowledge: bool = True) -> ContextBundle:
    """Tokenize, segment and budget all input components of one sample."""
    L = cfg.segment_len
    source, target = annotate_sample(sample)
    code = segment_tokens(tokenize(source, vocab), L, "code")
    ast = segment_tokens(ast_token_seq(parse_source(sample.source_fn), vocab), L, "ast") if use_ast else []
    name = pairs = labels = None
    if use_knowledge:
        name = Segment(tokenize(kb_bundle.cwe_name, vocab, "knowledge").tokens[:L], 0, "cwe_name")
        pairs, labels = [], []
        for k, p in enumerate(kb_bundle.pairs):
            ids = tokenize(p.example_code + "\n" + p.fix_code, vocab, "knowledge").tokens[:L]
            pairs.append(Segment(ids, k, "example_pair"))
            labels.append(p.label)
    bundle = ContextBundle(
        code_segments=code,
        ast_segments=ast,
        name_segment=name,
        pair_segments=pairs or (),
        pair_labels=labels or (),
        target_tokens=tokenize(target, vocab).tokens,
        sample_id=sample.id,
        meta={"source_len": len(tokenize(sample.source_fn, vocab)), "cwe_type": sample.cwe_type},
    )
    return select_slots(bundle, cfg.max_segments)


def single_segment_bundle(tokens, target, L: int, kind: str = "code", sample_id: str = "") -> ContextBundle:
    """A one-slot bundle holding the first ``L`` input tokens; used for adaptation."""
    ids = tokens.tokens if isinstance(tokens, TokenSeq) else tuple(tokens)
    tgt = target.tokens if isinstance(target, TokenSeq) else tuple(target)
    seg = Segment(ids[:L], 0, kind)
    if kind == "ast":
        return ContextBundle(code_segments=(), ast_segments=(seg,), target_tokens=tgt, sample_id=sample_id)
    return ContextBundle(code_segments=(seg,), target_tokens=tgt, sample_id=sample_id)


def knowledge_for(kb: dict[str, CweEntry] | None, h: CweHierarchy | None, cwe_type: str,
                  max_pairs: int) -> KnowledgeBundle:
    """Knowledge for one CWE type; types missing from the KB get a name-only bundle
    carrying the bare identifier."""
    if kb is None or cwe_type not in kb:
        return KnowledgeBundle(cwe_type)
    return assemble_knowledge(kb, h, cwe_type, max_pairs)


def build_contexts(samples, kb, h, cfg: ModelConfig, vocab: Vocabulary, max_pairs: int = 8,
                   use_ast: bool = True, use_knowledge: bool = True) -> list[ContextBundle]:
    cache: dict[str, KnowledgeBundle] = {}
    out = []
    for s in samples:
        if s.cwe_type not in cache:
            cache[s.cwe_type] = knowledge_for(kb, h, s.cwe_type, max_pairs)
        out.append(build_context(s, cache[s.cwe_type], cfg, vocab, use_ast, use_knowledge))
    return out


def vocab_texts(samples, kb: dict[str, CweEntry] | None = None):
    """Every text the model will see: code, fixes, AST entries and KB content."""
    for s in samples:
        yield s.source_fn
        yield s.fixed_fn
        yield "\n".join(linearize_dfs(parse_source(s.source_fn)).entries)
    for e in (kb or {}).values():
        yield e.name
        for ex in e.examples:
            yield ex.code
        yield from e.fixes
