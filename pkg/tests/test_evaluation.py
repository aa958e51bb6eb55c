import itertools
import json
import math
import random

import numpy as np
import pytest
from scipy import stats as sps

from fidrepair.evaluation import (
    TOP10_CWE,
    GroupSpec,
    SampleInfo,
    bleu4,
    codebleu,
    codebleu_components,
    dataflow_edges,
    evaluate_predictions,
    exact_match,
    frequent_types,
    load_top10,
    partition,
    subgroup_report,
    weighted_ngram_match,
    wilcoxon_signed_rank,
)
from fidrepair.preprocess import TokenSeq, Vocabulary, pre_tokenize, tokenize
from fidrepair.syntax import KEYWORDS, parse_source

# independent oracles ---------------------------------------------------------


def _grams(seq, n):
    return [tuple(seq[i : i + n]) for i in range(len(seq) - n + 1)]


def bleu_oracle(pred, ref, weight=lambda t: 1.0):
    if not pred:
        return 0.0
    logs = []
    for n in range(1, 5):
        pg, rg = _grams(pred, n), _grams(ref, n)
        pool = list(rg)
        m = tot = 0.0
        for g in pg:
            w = weight(g[0]) if n == 1 else 1.0
            tot += w
            if g in pool:
                pool.remove(g)
                m += w
        if m == 0:
            if n == 1:
                return 0.0
            p = 1.0 / (tot + 1.0)
        else:
            p = m / tot
        logs.append(math.log(p))
    c, r = len(pred), len(ref)
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return bp * math.exp(sum(logs) / 4)


def subtree_oracle(node, root=True):
    def sx(n):
        return "(" + n.node_type + "".join(" " + sx(c) for c in n.children) + ")"

    out = [sx(node)] if (root or node.children) else []
    for c in node.children:
        out.extend(subtree_oracle(c, root=False))
    return out


def syntax_oracle(pred, ref):
    rs = subtree_oracle(parse_source(ref))
    cs = subtree_oracle(parse_source(pred))
    hit = 0
    for s in rs:
        if s in cs:
            cs.remove(s)
            hit += 1
    return hit / len(rs)


# exact match -------------------------------------------------------------------


def test_exact_match_basics():
    assert exact_match([1, 2, 3], (1, 2, 3))
    assert not exact_match([1, 2, 3], [1, 2, 4])
    assert exact_match(TokenSeq((5, 6)), TokenSeq((5, 6), "ast"))
    vocab = Vocabulary.build(["int x = 0 ;"])
    assert exact_match(tokenize("int  x=0;\n", vocab), tokenize("int x = 0 ;", vocab))


# BLEU ---------------------------------------------------------------------------


def test_bleu_identity_and_empty_ref():
    assert bleu4("a b c d e".split(), "a b c d e".split()) == 1.0
    with pytest.raises(ValueError):
        bleu4(["a"], [])
    assert bleu4([], ["a"]) == 0.0


def test_bleu_disjoint_is_tiny():
    assert bleu4("p q r s t".split(), "a b c d e".split()) < 0.02


def test_bleu_half_truncation_closed_form():
    ref = "a b c d e f g h".split()
    assert bleu4(ref[:4], ref) == pytest.approx(math.exp(1 - 2), abs=1e-12)


def test_bleu_hand_computed_smoothing():
    # pred 5 tokens, 3 shared unigrams, 1 shared bigram, no higher matches
    pred = "a b x y z".split()
    ref = "a b c d e".split()
    p = [2 / 5, 1 / 4, 1 / 4, 1 / 3]  # n>=2 zero-match orders use 1/(total+1)
    want = math.exp(sum(math.log(x) for x in p) / 4)
    assert bleu4(pred, ref) == pytest.approx(want, abs=1e-12)


@pytest.mark.parametrize("seed", range(40))
def test_bleu_matches_oracle(seed):
    rng = random.Random(seed)
    alphabet = "abcdef"
    ref = [rng.choice(alphabet) for _ in range(rng.randint(1, 15))]
    pred = [rng.choice(alphabet) for _ in range(rng.randint(0, 15))]
    got = bleu4(pred, ref)
    assert got == pytest.approx(bleu_oracle(pred, ref), abs=1e-12)
    assert 0.0 <= got <= 1.0
    assert bleu4(ref, ref) == 1.0


# CodeBLEU -----------------------------------------------------------------------

REF = """int copy(char *dst, char *src, int n) {
    int i = 0;
    int total = n + 1;
    while (i < n) {
        dst[i] = src[i];
        i++;
    }
    total = total * 2;
    return total;
}"""
RENAMED = REF.replace("total", "acc").replace("dst", "out")


def test_codebleu_identity():
    assert codebleu(REF, REF) == 1.0
    assert codebleu_components(REF, REF) == (1.0, 1.0, 1.0, 1.0)


def test_codebleu_empty_prediction():
    assert codebleu_components("", REF) == (0.0, 0.0, 0.0, 0.0)


def test_codebleu_consistent_rename_against_oracles():
    a, b, c, d = codebleu_components(RENAMED, REF)
    p, r = pre_tokenize(RENAMED), pre_tokenize(REF)
    assert a == pytest.approx(bleu_oracle(p, r), abs=1e-12) and a < 1.0
    assert b == pytest.approx(bleu_oracle(p, r, lambda t: 4.0 if t in KEYWORDS else 1.0), abs=1e-12) and b < 1.0
    assert c == syntax_oracle(RENAMED, REF) == 1.0
    assert d == 1.0
    assert codebleu(RENAMED, REF) == pytest.approx((a + b + c + d) / 4, abs=1e-12)


def test_dataflow_edges_by_hand():
    # names by first appearance: copy v0, dst v1, src v2, n v3, i v4, total v5
    edges = dataflow_edges(parse_source(REF))
    want = {
        ("v5", "v3"): 1,  # total = n + 1
        ("v1", "v2"): 1,  # dst[i] = src[i]
        ("v1", "v4"): 2,  # i read on both sides of that assignment
        ("v4", "v4"): 1,  # i++
        ("v5", "v5"): 1,  # total = total * 2
    }
    assert dict(edges) == want


def test_dataflow_partial_match():
    # drop one statement: the reference keeps edges the candidate lacks
    pred = REF.replace("        i++;\n", "")
    _, _, _, d = codebleu_components(pred, REF)
    assert d == pytest.approx(5 / 6)


def test_weighted_ngram_counts_keywords_more():
    # same position, so only the unigram weights differ
    ref = "a int b x c".split()
    kw_miss = "a long b x c".split()
    id_miss = "a int b q c".split()
    assert weighted_ngram_match(kw_miss, ref) < weighted_ngram_match(id_miss, ref)


def _random_code(rng):
    stmts = ["int a = b + 1;", "x = y;", "if (a) return b;", "c[i] = d;", "while (n) n--;", "f(a, b);", "@@"]
    return " ".join(rng.choice(stmts) for _ in range(rng.randint(1, 6)))


@pytest.mark.parametrize("seed", range(100))
def test_codebleu_bleu_weights_equal_bleu(seed):
    rng = random.Random(seed)
    pred, ref = _random_code(rng), _random_code(rng)
    assert codebleu(pred, ref, (1, 0, 0, 0)) == bleu4(pre_tokenize(pred), pre_tokenize(ref))
    v = codebleu(pred, ref)
    assert 0.0 <= v <= 1.0
    assert syntax_oracle(pred, ref) == codebleu_components(pred, ref)[2]


def test_codebleu_rejects_bad_weights():
    with pytest.raises(ValueError):
        codebleu("a", "a", (0.5, 0.5, 0.5, 0))


# Wilcoxon ------------------------------------------------------------------------


def wilcoxon_oracle(a, b):
    d = [x - y for x, y in zip(a, b) if x != y]
    if not d:
        return 1.0
    order = sorted(abs(x) for x in d)
    rank = {}
    for v in set(order):
        idx = [i + 1 for i, x in enumerate(order) if x == v]
        rank[v] = sum(idx) / len(idx)
    r = [rank[abs(x)] for x in d]
    w = sum(ri for ri, x in zip(r, d) if x > 0)
    sums = [sum(ri for ri, s in zip(r, signs) if s) for signs in itertools.product((0, 1), repeat=len(r))]
    lo = sum(s <= w + 1e-12 for s in sums) / len(sums)
    hi = sum(s >= w - 1e-12 for s in sums) / len(sums)
    return min(1.0, 2 * min(lo, hi))


def test_wilcoxon_n6_all_positive():
    assert wilcoxon_signed_rank([(i + 1.0, 0.0) for i in range(6)]) == pytest.approx(2 / 64, abs=1e-12)


def test_wilcoxon_identical():
    assert wilcoxon_signed_rank([(0.3, 0.3)] * 8) == 1.0


@pytest.mark.parametrize("seed", range(30))
def test_wilcoxon_exact_matches_enumeration(seed):
    rng = random.Random(seed)
    n = rng.randint(1, 10)
    a = [rng.choice([0, 1, 2, 3]) for _ in range(n)]  # small support -> ties and zeros
    b = [rng.choice([0, 1, 2, 3]) for _ in range(n)]
    assert wilcoxon_signed_rank(list(zip(a, b))) == pytest.approx(wilcoxon_oracle(a, b), abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_wilcoxon_against_scipy(seed):
    rng = np.random.default_rng(seed)
    for n, method in ((12, "exact"), (60, "approx")):
        a, b = rng.normal(size=n), rng.normal(size=n) + 0.2
        want = sps.wilcoxon(a, b, method=method, correction=True).pvalue
        assert wilcoxon_signed_rank(list(zip(a, b))) == pytest.approx(want, abs=1e-9)


def test_wilcoxon_null_calibration():
    rng = np.random.default_rng(7)
    above = sum(
        wilcoxon_signed_rank(list(zip(rng.normal(size=100), rng.normal(size=100)))) > 0.01 for _ in range(100)
    )
    assert above >= 95


# subgroups ----------------------------------------------------------------------


def _info(lengths, cwes=None):
    cwes = cwes or ["CWE-20"] * len(lengths)
    return [SampleInfo(f"s{i}", n, c) for i, (n, c) in enumerate(zip(lengths, cwes))]


def test_length_groups_by_hand():
    lengths = [10, 449, 450, 1000, 3, 449, 700, 12, 451, 90]
    groups = partition(GroupSpec("length"), _info(lengths))
    assert groups["long"] == ["s2", "s3", "s6", "s8"]
    assert groups["short"] == ["s0", "s1", "s4", "s5", "s7", "s9"]
    short_only = partition(GroupSpec("length"), _info([1, 2, 3]))
    assert short_only == {"short": ["s0", "s1", "s2"], "long": []}


def test_frequency_groups_whole_types():
    cwes = ["CWE-1"] * 4 + ["CWE-2"] * 3 + ["CWE-3"] * 2 + ["CWE-4"]
    assert frequent_types(cwes) == {"CWE-1", "CWE-2"}
    groups = partition(GroupSpec("frequency"), _info([1] * 10, cwes))
    assert len(groups["frequent"]) == 7 and len(groups["infrequent"]) == 3


def test_top10_data_file():
    top = load_top10()
    assert [c for c, _ in top] == ["CWE-787", "CWE-79", "CWE-89", "CWE-416", "CWE-78",
                                  "CWE-20", "CWE-125", "CWE-22", "CWE-352", "CWE-434"]
    assert sum(n for _, n in top) == 417
    assert TOP10_CWE == tuple(c for c, _ in top)


def test_risk_group_realizes_table_counts():
    # a test set with the per-type counts of the reference dataset plus other types
    cwes = [c for c, n in load_top10() for _ in range(n)] + ["CWE-476"] * 50 + ["CWE-190"] * 30
    groups = partition(GroupSpec("risk"), _info([1] * len(cwes), cwes))
    assert len(groups["top_risk"]) == 417 and len(groups["less_risky"]) == 80


@pytest.mark.parametrize("criterion", ["length", "frequency", "risk"])
def test_partition_property(criterion):
    rng = random.Random(criterion)
    info = _info([rng.randint(0, 900) for _ in range(60)], [rng.choice(TOP10_CWE + ("CWE-1", "CWE-2")) for _ in range(60)])
    groups = partition(GroupSpec(criterion), info)
    ids = [i for g in groups.values() for i in g]
    assert sorted(ids) == sorted(s.id for s in info)


def test_custom_groups_overlap_and_cover():
    info = _info([1, 2, 3])
    ok = partition(GroupSpec("custom", groups={"a": ["s0"], "b": ["s1", "s2"]}), info)
    assert ok == {"a": ["s0"], "b": ["s1", "s2"]}
    with pytest.raises(ValueError, match="both"):
        partition(GroupSpec("custom", groups={"a": ["s0", "s1"], "b": ["s1", "s2"]}), info)
    with pytest.raises(ValueError, match="no group"):
        partition(GroupSpec("custom", groups={"a": ["s0"]}), info)
    with pytest.raises(ValueError):
        GroupSpec("severity")


# report -------------------------------------------------------------------------


def test_report_aggregates_and_serialization(tmp_path):
    vocab = Vocabulary.build([REF])
    preds = [REF, RENAMED, ""]
    refs = [REF, REF, REF]
    rep = evaluate_predictions(["a", "b", "c"], preds, refs, vocab)
    assert rep.em_percent == pytest.approx(100 / 3)
    assert rep.bleu_percent == pytest.approx(100 * np.mean([r["bleu"] for r in rep.rows]))
    assert rep.codebleu_percent == pytest.approx(100 * np.mean([r["codebleu"] for r in rep.rows]))
    info = [SampleInfo("a", 10, "CWE-787"), SampleInfo("b", 500, "CWE-20"), SampleInfo("c", 20, "CWE-1")]
    rep.subgroups["length"] = subgroup_report(rep.rows, GroupSpec("length"), info)
    rep.write(tmp_path / "r.jsonl")
    recs = [json.loads(x) for x in (tmp_path / "r.jsonl").read_text().splitlines()]
    assert recs[0]["kind"] == "summary" and "sentence" in recs[0]["aggregation"]
    assert [r["id"] for r in recs if r["kind"] == "sample"] == ["a", "b", "c"]
    short = next(r for r in recs if r["kind"] == "group" and r["group"] == "short")
    assert short["count"] == 2 and short["em_percent"] == 50.0
    assert "CodeBLEU" in rep.table()
    with pytest.raises(ValueError):
        evaluate_predictions(["a"], [], [], vocab)
