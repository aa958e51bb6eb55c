"""Exact match, sentence-level BLEU-4 and a CodeBLEU variant built on the C-subset parser."""

from __future__ import annotations

import math
from collections import Counter
from typing import Hashable, Sequence

from ..preprocess import TokenSeq, pre_tokenize
from ..syntax import KEYWORDS, AstNode, parse_source
from ..validation import check_weights

KEYWORD_WEIGHT = 4.0
MAX_N = 4


def _ids(x) -> tuple:
    return tuple(x.tokens) if isinstance(x, TokenSeq) else tuple(x)


def exact_match(pred, ref) -> bool:
    return _ids(pred) == _ids(ref)


def ngrams(tokens: Sequence[Hashable], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def brevity_penalty(c: int, r: int) -> float:
    if c == 0:
        return 0.0
    return 1.0 if c > r else math.exp(1.0 - r / c)


def _precision(matches: float, total: float, n: int) -> float:
    # add-one smoothing for higher orders only; a zero unigram precision stays zero
    if n >= 2 and matches == 0:
        return 1.0 / (total + 1.0)
    return matches / total if total else 0.0


def _combine(precisions: Sequence[float], c: int, r: int) -> float:
    if min(precisions) <= 0.0:
        return 0.0
    return brevity_penalty(c, r) * math.exp(sum(math.log(p) for p in precisions) / len(precisions))


def bleu4(pred, ref) -> float:
    """Sentence BLEU-4 with uniform weights over token sequences (ids or strings)."""
    pred, ref = _ids(pred), _ids(ref)
    if not ref:
        raise ValueError("reference is empty")
    if not pred:
        return 0.0
    precisions = []
    for n in range(1, MAX_N + 1):
        p_counts, r_counts = ngrams(pred, n), ngrams(ref, n)
        matches = sum(min(c, r_counts[g]) for g, c in p_counts.items())
        precisions.append(_precision(matches, sum(p_counts.values()), n))
    return _combine(precisions, len(pred), len(ref))


def weighted_ngram_match(pred: Sequence[str], ref: Sequence[str], keywords=KEYWORDS,
                         keyword_weight: float = KEYWORD_WEIGHT) -> float:
    """BLEU-4 whose unigram precision counts keyword tokens ``keyword_weight`` times."""
    pred, ref = tuple(pred), tuple(ref)
    if not ref:
        return 1.0 if not pred else 0.0
    if not pred:
        return 0.0

    def w(tok):
        return keyword_weight if tok in keywords else 1.0

    r1 = Counter(ref)
    p1 = Counter(pred)
    matches = sum(w(t) * min(c, r1[t]) for t, c in p1.items())
    total = sum(w(t) * c for t, c in p1.items())
    precisions = [_precision(matches, total, 1)]
    for n in range(2, MAX_N + 1):
        p_counts, r_counts = ngrams(pred, n), ngrams(ref, n)
        m = sum(min(c, r_counts[g]) for g, c in p_counts.items())
        precisions.append(_precision(m, sum(p_counts.values()), n))
    return _combine(precisions, len(pred), len(ref))


# ---------------------------------------------------------------------------
# syntax component


def type_sexpr(node: AstNode) -> str:
    """Structure-only rendering: node types, no surface values."""
    if not node.children:
        return f"({node.node_type})"
    return f"({node.node_type} {' '.join(type_sexpr(c) for c in node.children)})"


def subtrees(root: AstNode) -> Counter:
    """The root plus every internal node, as type-only S-expressions."""
    out = Counter([type_sexpr(root)])
    for node in root.iter_preorder():
        if node is not root and node.children:
            out[type_sexpr(node)] += 1
    return out


def syntax_match(pred_text: str, ref_text: str) -> float:
    ref = subtrees(parse_source(ref_text))
    cand = subtrees(parse_source(pred_text))
    matched = sum(min(c, cand[s]) for s, c in ref.items())
    return matched / sum(ref.values())


# ---------------------------------------------------------------------------
# dataflow component


def _identifiers(node: AstNode) -> list[str]:
    return [n.value for n in node.iter_preorder() if n.node_type == "identifier"]


def _reads(node: AstNode) -> list[str]:
    """Identifiers read by an expression, skipping callee names."""
    out: list[str] = []
    stack = [node]
    while stack:
        n = stack.pop()
        if n.node_type == "identifier":
            out.append(n.value)
        kids = n.children
        if n.node_type == "call_expression" and kids and kids[0].node_type == "identifier":
            kids = kids[1:]
        stack.extend(reversed(kids))
    return out


def _target(node: AstNode) -> str | None:
    """Variable defined by an assignment target: a plain name, or the base of a subscript."""
    while node.node_type in ("subscript_expression", "pointer_declarator", "array_declarator",
                             "parenthesized_expression", "pointer_expression") and node.children:
        node = node.children[0]
    return node.value if node.node_type == "identifier" else None


def dataflow_edges(root: AstNode) -> Counter:
    """Def-use edges ``(defined, read)`` from assignments, initializers and updates.

    Variable names are replaced by their order of first appearance, so a
    consistent renaming leaves the edge set unchanged.
    """
    names: dict[str, str] = {}
    for v in _identifiers(root):
        names.setdefault(v, f"v{len(names)}")
    edges: Counter = Counter()
    for node in root.iter_preorder():
        t = node.node_type
        if t == "assignment_expression" and len(node.children) == 2:
            lhs, rhs = node.children
            d = _target(lhs)
            if d is None:
                continue
            reads = _reads(rhs)
            if node.value != "=":
                reads = [d, *reads]
            # an index expression on the left is also read
            if lhs.node_type == "subscript_expression":
                reads.extend(_reads(lhs)[1:])
            for u in reads:
                edges[(names[d], names[u])] += 1
        elif t == "init_declarator" and len(node.children) == 2:
            d = _target(node.children[0])
            if d is not None:
                for u in _reads(node.children[1]):
                    edges[(names[d], names[u])] += 1
        elif t == "update_expression" and node.children:
            d = _target(node.children[0])
            if d is not None:
                edges[(names[d], names[d])] += 1
    return edges


def dataflow_match(pred_text: str, ref_text: str) -> float:
    ref = dataflow_edges(parse_source(ref_text))
    cand = dataflow_edges(parse_source(pred_text))
    if not ref:
        # nothing to match: agree only when the candidate is equally edge-free and
        # equally empty or nonempty as the reference
        same_emptiness = bool(pre_tokenize(pred_text)) == bool(pre_tokenize(ref_text))
        return 1.0 if not cand and same_emptiness else 0.0
    return sum(min(c, cand[e]) for e, c in ref.items()) / sum(ref.values())


# ---------------------------------------------------------------------------


def codebleu_components(pred_text: str, ref_text: str) -> tuple[float, float, float, float]:
    p, r = pre_tokenize(pred_text), pre_tokenize(ref_text)
    if r:
        bleu = bleu4(p, r)
    else:
        bleu = 1.0 if not p else 0.0
    return (bleu, weighted_ngram_match(p, r), syntax_match(pred_text, ref_text), dataflow_match(pred_text, ref_text))


def codebleu(pred_text: str, ref_text: str, weights=(0.25, 0.25, 0.25, 0.25)) -> float:
    weights = check_weights(weights)
    parts = codebleu_components(pred_text, ref_text)
    return sum(w * c for w, c in zip(weights, parts) if w)
