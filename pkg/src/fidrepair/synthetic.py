"""Seeded synthetic corpora and probes used by the test-suite and the demo pipeline."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .corpus import DatasetSplits, RepairSample
from .cwe_kb import CweEntry, CweExample
from .fid_model.context import ContextBundle
from .preprocess import Segment

# ---------------------------------------------------------------------------
# planted-copy probe

COPY_MARKER = 9
COPY_FIRST_CONTENT = 10


def planted_copy_task(n: int, L: int = 8, n_segments: int = 4, answer_segments: Sequence[int] = (2,),
                      answer_len: int = 3, vocab_size: int = 48, seed: int = 0) -> list[ContextBundle]:
    """Bundles of ``n_segments`` random code slots; one slot holds a marker followed
    by the answer, and the target is the answer.

    The answer slot is drawn uniformly from ``answer_segments`` per sample.
    """
    if answer_len + 1 > L:
        raise ValueError("marker and answer must fit in one segment")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        toks = rng.integers(COPY_FIRST_CONTENT, vocab_size, size=(n_segments, L))
        s = int(rng.choice(answer_segments))
        p = int(rng.integers(0, L - answer_len))
        answer = rng.integers(COPY_FIRST_CONTENT, vocab_size, size=answer_len)
        toks[s, p] = COPY_MARKER
        toks[s, p + 1 : p + 1 + answer_len] = answer
        segs = tuple(Segment(tuple(int(x) for x in toks[j]), j, "code") for j in range(n_segments))
        out.append(ContextBundle(code_segments=segs, target_tokens=tuple(int(a) for a in answer),
                                 sample_id=f"copy-{seed}-{i}", meta={"answer_segment": s}))
    return out


def token_accuracy(preds: Sequence[Sequence[int]], bundles: Sequence[ContextBundle]) -> float:
    """Position-wise agreement with the targets; missing positions count as wrong."""
    hit = total = 0
    for p, b in zip(preds, bundles):
        t = b.target_tokens
        hit += sum(1 for i, tok in enumerate(t) if i < len(p) and p[i] == tok)
        total += len(t)
    return hit / total if total else 0.0


# ---------------------------------------------------------------------------
# relevance probe


def separable_relevance_task(n: int, L: int = 6, n_pairs: int = 4, vocab_size: int = 40,
                             seed: int = 0) -> list[ContextBundle]:
    """Bundles whose pair slots are labelled by which half of the content vocabulary
    their first token comes from, so the labels are a linear function of the
    mean-pooled embeddings."""
    rng = np.random.default_rng(seed)
    lo, hi = COPY_FIRST_CONTENT, vocab_size
    mid = (lo + hi) // 2
    out = []
    for i in range(n):
        code = Segment(tuple(int(x) for x in rng.integers(lo, hi, size=L)), 0, "code")
        labels = [int(x) for x in rng.integers(0, 2, size=n_pairs)]
        pairs = []
        for k, g in enumerate(labels):
            first = rng.integers(mid, hi) if g else rng.integers(lo, mid)
            rest = rng.integers(lo, hi, size=L - 1)
            pairs.append(Segment((int(first), *(int(x) for x in rest)), k, "example_pair"))
        out.append(ContextBundle(code_segments=(code,), name_segment=Segment((COPY_MARKER,), 0, "cwe_name"),
                                 pair_segments=tuple(pairs), pair_labels=tuple(labels),
                                 target_tokens=code.tokens[:2], sample_id=f"rel-{seed}-{i}"))
    return out


# ---------------------------------------------------------------------------
# vulnerable/fixed C functions

_NAMES = ("buf", "dst", "src", "data", "out", "tbl", "arr", "msg", "pkt", "blk", "img", "row")
_INDICES = ("i", "j", "k", "n", "idx", "pos", "off", "len")
_VALUES = ("v", "val", "c", "x", "y", "z", "w", "b")
_FUNCS = ("put", "get", "load", "store", "copy", "fill", "read", "write", "scan", "emit", "parse", "peek")
_LIMITS = ("16", "32", "64", "128", "256", "512")


def _pick(rng, pool, k=1, avoid=()):
    choices = [p for p in pool if p not in avoid]
    idx = rng.choice(len(choices), size=k, replace=False)
    return [choices[i] for i in idx]


def _template(cwe: str, rng) -> tuple[list[str], list[str], int]:
    """(vulnerable lines, fixed lines, vulnerable line index)."""
    fn = _pick(rng, _FUNCS)[0]
    a, = _pick(rng, _NAMES)
    i, = _pick(rng, _INDICES)
    v, = _pick(rng, _VALUES)
    lim = _pick(rng, _LIMITS)[0]
    if cwe == "CWE-787":
        head = f"int {fn}(char *{a}, int {i}, int {v}) {{"
        body = [f"{a}[{i}] = {v};"]
        guard = [f"if ({i} < 0 || {i} >= {lim}) return -1;"]
    elif cwe == "CWE-125":
        head = f"int {fn}(char *{a}, int {i}) {{"
        body = [f"int {v} = {a}[{i}];"]
        guard = [f"if ({i} >= {lim}) return -1;"]
    elif cwe == "CWE-476":
        head = f"int {fn}(int *{a}, int {v}) {{"
        body = [f"*{a} = {v};"]
        guard = ["if (" + a + " == NULL) return -1;"]
    else:  # CWE-190
        head = f"int {fn}(int {i}, int {v}) {{"
        body = [f"int {a} = {i} * {v};"]
        guard = [f"if ({v} != 0 && {i} > INT_MAX / {v}) return -1;"]
    tail = ["return 0;", "}"]
    vuln = [head, *body, *tail]
    fixed = [head, *guard, *body, *tail]
    return vuln, fixed, 1


REPAIR_CWES = ("CWE-787", "CWE-125", "CWE-476", "CWE-190")


def _repair_pair(rng, cwe: str) -> tuple[str, str, int]:
    vuln, fixed, line = _template(cwe, rng)
    return "\n".join(vuln), "\n".join(fixed), line


def synthetic_repair_corpus(n: int, seed: int = 0, cwes: Sequence[str] = REPAIR_CWES,
                            prefix: str = "syn") -> list[RepairSample]:
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        cwe = cwes[int(rng.integers(len(cwes)))]
        src, fixed, line = _repair_pair(rng, cwe)
        out.append(RepairSample(f"{prefix}-{seed}-{k}", src, fixed, cwe, (line, line)))
    return out


def bugfix_corpus(n: int, seed: int = 0, cwes: Sequence[str] = REPAIR_CWES) -> list[tuple[str, str]]:
    """Unannotated (buggy, fixed) function pairs for adaptation."""
    rng = np.random.default_rng(seed)
    return [_repair_pair(rng, cwes[int(rng.integers(len(cwes)))])[:2] for _ in range(n)]


# ---------------------------------------------------------------------------
# knowledge base fixtures


def demo_kb() -> dict[str, CweEntry]:
    """A small hierarchy around out-of-bounds access and its neighbours, fixes included."""

    def entry(cid, name, parents, code, fix):
        ex = CweExample(code=code, language="c", analysis=f"{name.lower()} in the example")
        return CweEntry(cid, name, list(parents), [ex], [fix])

    return {
        e.id: e
        for e in [
            entry("CWE-119", "Improper Restriction of Operations within the Bounds of a Memory Buffer", [],
                  "char b[8]; b[n] = 0;", "char b[8]; if (n < 8) b[n] = 0;"),
            entry("CWE-125", "Out-of-bounds Read", ["CWE-119"],
                  "int v = a[i];", "if (i >= 16) return -1;\nint v = a[i];"),
            entry("CWE-126", "Buffer Over-read", ["CWE-125"],
                  "memcpy(d, s, n);", "memcpy(d, s, n < 16 ? n : 16);"),
            entry("CWE-127", "Buffer Under-read", ["CWE-125"],
                  "int v = a[i - 1];", "if (i < 1) return -1;\nint v = a[i - 1];"),
            entry("CWE-787", "Out-of-bounds Write", ["CWE-119"],
                  "a[i] = v;", "if (i < 0 || i >= 16) return -1;\na[i] = v;"),
            entry("CWE-476", "NULL Pointer Dereference", [],
                  "*p = v;", "if (p == NULL) return -1;\n*p = v;"),
            entry("CWE-190", "Integer Overflow or Wraparound", [],
                  "int m = a * b;", "if (b != 0 && a > INT_MAX / b) return -1;\nint m = a * b;"),
        ]
    }


def random_kb(rng: np.random.Generator, n_entries: int, max_examples: int = 3,
              max_parents: int = 2) -> dict[str, CweEntry]:
    """Random acyclic KB: parents are always drawn from earlier entries."""
    ids = [f"CWE-{x}" for x in rng.choice(2000, size=n_entries, replace=False)]
    kb = {}
    for k, cid in enumerate(ids):
        n_par = int(rng.integers(0, min(k, max_parents) + 1))
        parents = [ids[j] for j in rng.choice(k, size=n_par, replace=False)] if n_par else []
        n_ex = int(rng.integers(0, max_examples + 1))
        examples = [CweExample(f"code {cid} {e}") for e in range(n_ex)]
        kb[cid] = CweEntry(cid, f"name {cid}", parents, examples, [f"fix {cid} {e}" for e in range(n_ex)])
    order = rng.permutation(n_entries)
    return {ids[j]: kb[ids[j]] for j in order}


# ---------------------------------------------------------------------------
# deduplication fixture


def planted_duplicate_splits(seed: int = 0) -> DatasetSplits:
    """10 train (3 copy a test pair), 4 valid (1 copies a test pair), 6 test (2 are
    one repeated pair), so the expected removal report is (3, 1, 1).

    Copies differ from their originals only in trailing whitespace and line
    endings, which normalization must see through.
    """
    rng = np.random.default_rng(seed)
    pool = [(s.source_fn, s.fixed_fn) for s in synthetic_repair_corpus(40, seed, prefix="pool")]
    pool = list(dict.fromkeys(pool))
    fresh = iter(pool)

    def sample(prefix, k, pair, noisy=False):
        src, fix = pair
        if noisy:
            src = src.replace("\n", "  \r\n")
            fix = fix + "\t"
        return RepairSample(f"{prefix}-{k}", src, fix, "CWE-787", None)

    test_pairs = [next(fresh) for _ in range(5)]
    test = [sample("test", k, p) for k, p in enumerate(test_pairs)]
    test.insert(3, sample("test", 5, test_pairs[1], noisy=True))  # one internal duplicate

    valid = [sample("valid", k, next(fresh)) for k in range(3)]
    valid.insert(int(rng.integers(0, 4)), sample("valid", 3, test_pairs[4], noisy=True))

    train = [sample("train", k, next(fresh)) for k in range(7)]
    for k, t in enumerate((0, 2, 4)):
        train.insert(int(rng.integers(0, len(train) + 1)), sample("train", 7 + k, test_pairs[t], noisy=True))
    return DatasetSplits(train=train, valid=valid, test=test)
