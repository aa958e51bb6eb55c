import math

import numpy as np
import pytest
import torch
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from fidrepair.cwe_kb import build_hierarchy
from fidrepair.fid_model import (
    ContextBundle,
    FiDRepairModel,
    ModelConfig,
    adaptation_kinds,
    build_context,
    build_contexts,
    check_gradients,
    collate,
    compute_loss,
    encode_segment,
    fuse,
    generate,
    init_model,
    knowledge_for,
    relevance_forward,
    relevance_loss,
    select_slots,
    train,
    vocab_texts,
)
from fidrepair.fid_model.checkpoint import load_checkpoint, save_checkpoint
from fidrepair.fid_model.training import adaptation_bundles
from fidrepair.preprocess import Segment, Vocabulary
from fidrepair.synthetic import bugfix_corpus, demo_kb, planted_copy_task, synthetic_repair_corpus


def _seg(n, kind="code", idx=0, start=10):
    return Segment(tuple(range(start, start + n)), idx, kind)


def _bundle(n_code=1, n_ast=1, name=True, labels=(1, 0), target=(11, 12)):
    return ContextBundle(
        code_segments=tuple(_seg(3, "code", i, 10 + i) for i in range(n_code)),
        ast_segments=tuple(_seg(2, "ast", i, 20 + i) for i in range(n_ast)),
        name_segment=_seg(1, "cwe_name", 0, 30) if name else None,
        pair_segments=tuple(_seg(2, "example_pair", k, 40 + k) for k in range(len(labels))),
        pair_labels=labels,
        target_tokens=target,
    )


def _tiny_cfg(**kw):
    base = dict(vocab_size=48, d_model=16, n_heads=2, n_enc_layers=1, n_dec_layers=1, ffn_dim=32,
                segment_len=8, max_segments=4, max_target_len=8, batch_size=8, learning_rate=1e-3)
    base.update(kw)
    return ModelConfig(**base)


# slot budget -----------------------------------------------------------------


def test_short_function_keeps_everything():
    b = select_slots(_bundle(), 10)
    assert [s.kind for s in b.slots()] == ["code", "ast", "cwe_name", "example_pair", "example_pair"]


def _drop_oracle(n_code, n_ast, labels, K):
    """How many of each group survive, computed from the drop priorities directly."""
    excess = n_code + n_ast + 1 + len(labels) - K
    n0, n1 = labels.count(0), labels.count(1)
    counts = {}
    for group, have in (("neg", n0), ("ast", n_ast), ("pos", n1), ("code", n_code)):
        cut = min(max(excess, 0), have)
        counts[group] = have - cut
        excess -= cut
    return counts


@pytest.mark.parametrize("K", range(2, 17))
def test_drop_order_long_function(K):
    labels = (1, 0, 1, 0)
    b = select_slots(_bundle(n_code=6, n_ast=4, labels=labels), K)
    want = _drop_oracle(6, 4, list(labels), K)
    assert b.n_slots == min(K, 15)
    assert len(b.code_segments) == want["code"] and len(b.ast_segments) == want["ast"]
    assert b.pair_labels.count(0) == want["neg"] and b.pair_labels.count(1) == want["pos"]
    assert b.name_segment is not None
    # surviving segments are always a prefix of their group, in original order
    assert [s.index for s in b.code_segments] == list(range(len(b.code_segments)))
    assert [s.index for s in b.ast_segments] == list(range(len(b.ast_segments)))


def test_k10_example():
    b = select_slots(_bundle(n_code=6, n_ast=4, labels=(1, 0, 1, 0)), 10)
    assert (len(b.code_segments), len(b.ast_segments), b.pair_labels) == (6, 1, (1, 1))


def test_k1_with_code_and_name_fails():
    with pytest.raises(ValueError, match="K=1"):
        select_slots(_bundle(), 1)
    with pytest.raises(ValueError):
        select_slots(_bundle(), 0)


def test_build_context_from_sample():
    kb = demo_kb()
    h = build_hierarchy(kb)
    samples = synthetic_repair_corpus(3, seed=1)
    vocab = Vocabulary.build(vocab_texts(samples, kb))
    cfg = _tiny_cfg(vocab_size=len(vocab), segment_len=32, max_segments=20)
    bundles = build_contexts(samples, kb, h, cfg, vocab, max_pairs=3)
    for s, b in zip(samples, bundles):
        kinds = [x.kind for x in b.slots()]
        assert kinds == sorted(kinds, key=["code", "ast", "cwe_name", "example_pair"].index)
        assert all(len(x) <= 32 for x in b.slots())
        assert b.meta["cwe_type"] == s.cwe_type
        assert list(b.pair_labels) == sorted(b.pair_labels, reverse=True)
    small = build_context(samples[0], knowledge_for(kb, h, samples[0].cwe_type, 3),
                          _tiny_cfg(vocab_size=len(vocab), segment_len=32, max_segments=3), vocab)
    assert small.n_slots <= 3 and small.name_segment is not None


def test_type_missing_from_kb_gets_name_only():
    kb = demo_kb()
    bundle = knowledge_for(kb, build_hierarchy(kb), "CWE-9999", 4)
    assert bundle.cwe_name == "CWE-9999" and bundle.pairs == ()


def test_ablations_drop_components():
    kb = demo_kb()
    s = synthetic_repair_corpus(1, seed=2)[0]
    vocab = Vocabulary.build(vocab_texts([s], kb))
    cfg = _tiny_cfg(vocab_size=len(vocab), segment_len=64, max_segments=20)
    kn = knowledge_for(kb, build_hierarchy(kb), s.cwe_type, 3)
    assert not build_context(s, kn, cfg, vocab, use_ast=False).ast_segments
    plain = build_context(s, kn, cfg, vocab, use_knowledge=False)
    assert plain.name_segment is None and not plain.pair_segments


# encoder and fusion ----------------------------------------------------------


@pytest.fixture(scope="module")
def model():
    return init_model(_tiny_cfg())


def test_encode_segment_shapes(model):
    assert encode_segment(model, []).shape == (0, 16)
    out = encode_segment(model, _seg(5))
    assert out.shape == (5, 16)
    assert torch.equal(out, encode_segment(model, _seg(5)))
    with pytest.raises(ValueError, match="exceeds"):
        encode_segment(model, list(range(10, 19)))


def test_fuse_shapes():
    assert fuse([torch.zeros(3, 4), torch.zeros(5, 4)]).shape == (8, 4)
    assert fuse([torch.zeros(512, 8)] * 10).shape == (5120, 8)
    with pytest.raises(ValueError):
        fuse([torch.zeros(3, 4), torch.zeros(3, 5)])
    with pytest.raises(ValueError):
        fuse([])


def test_fused_rows_follow_slot_order(model):
    b = _bundle()
    batch = collate([b], model.cfg)
    with torch.no_grad():
        _, _, enc = model.fuse_batch(batch.slot_tokens, batch.slot_mask)
        for j, seg in enumerate(b.slots()):
            assert torch.allclose(enc[0, j, : len(seg)], encode_segment(model, seg), atol=1e-5)


def test_slot_position_does_not_change_encoding(model):
    a, c = _seg(4, start=10), _seg(4, start=20)
    with torch.no_grad():
        first = encode_segment(model, a)
        b1 = collate([ContextBundle(code_segments=(a, c), target_tokens=(1,))], model.cfg)
        b2 = collate([ContextBundle(code_segments=(c, a), target_tokens=(1,))], model.cfg)
        _, _, e1 = model.fuse_batch(b1.slot_tokens, b1.slot_mask)
        _, _, e2 = model.fuse_batch(b2.slot_tokens, b2.slot_mask)
    assert torch.allclose(e1[0, 0], first, atol=1e-5) and torch.allclose(e2[0, 1], first, atol=1e-5)


def test_loss_invariant_to_slot_permutation(model):
    segs = tuple(_seg(4, start=10 + 5 * i) for i in range(3))
    with torch.no_grad():
        l1 = compute_loss(model, [ContextBundle(code_segments=segs, target_tokens=(11, 12))]).total
        l2 = compute_loss(model, [ContextBundle(code_segments=segs[::-1], target_tokens=(11, 12))]).total
    assert abs(float(l1) - float(l2)) < 1e-5


# relevance and loss ----------------------------------------------------------


def _constant_head(m, bias):
    with torch.no_grad():
        m.relevance[2].weight.zero_()
        m.relevance[2].bias.fill_(bias)


def test_zero_head_scores_half():
    m = init_model(_tiny_cfg())
    _constant_head(m, 0.0)
    p = relevance_forward(m, [encode_segment(m, _seg(3)), encode_segment(m, _seg(2))])
    assert torch.allclose(p, torch.full((2,), 0.5))
    assert relevance_forward(m, []).shape == (0,)


def test_relevance_loss_hand_values():
    assert relevance_loss([0.5], [1]) == pytest.approx(math.log(2), abs=1e-12)
    want = -(math.log(0.9) + math.log(1 - 0.2) + math.log(0.6))
    assert relevance_loss([0.9, 0.2, 0.6], [1, 0, 1]) == pytest.approx(want, abs=1e-12)
    assert relevance_loss([], []) == 0.0


def test_model_relevance_loss_matches_formula():
    m = init_model(_tiny_cfg())
    _constant_head(m, 0.4)
    p = 1 / (1 + math.exp(-0.4))
    loss = compute_loss(m, [_bundle(labels=(1, 0, 1))])
    assert float(loss.l_relevance.detach()) == pytest.approx(relevance_loss([p] * 3, [1, 0, 1]), abs=1e-5)
    _constant_head(m, 0.0)
    assert float(compute_loss(m, [_bundle(labels=(1,))]).l_relevance.detach()) == pytest.approx(math.log(2), abs=1e-6)


def test_loss_parts_add_up(model):
    loss = compute_loss(model, [_bundle(), _bundle(labels=(0, 0, 1))])
    assert float(loss.total.detach()) == float((loss.l_repair + loss.l_relevance).detach())
    nopairs = compute_loss(model, [_bundle(labels=())])
    assert float(nopairs.l_relevance.detach()) == 0.0
    assert float(nopairs.total.detach()) == float(nopairs.l_repair.detach())
    off = compute_loss(model, [_bundle()], use_relevance=False)
    assert float(off.l_relevance.detach()) == 0.0


def test_repair_loss_is_mean_token_nll():
    m = init_model(_tiny_cfg(dtype="float64"))
    b = _bundle(labels=(), target=(11, 12, 13))
    batch = collate([b], m.cfg)
    with torch.no_grad():
        memory, mask, _ = m.fuse_batch(batch.slot_tokens, batch.slot_mask)
        logp = torch.log_softmax(m.decode(batch.dec_in, memory, mask), -1)[0]
    gold = [11, 12, 13, 2]
    want = -sum(float(logp[i, t]) for i, t in enumerate(gold)) / len(gold)
    assert float(compute_loss(m, [b]).l_repair.detach()) == pytest.approx(want, abs=1e-9)


def test_empty_target_rejected(model):
    with pytest.raises(ValueError, match="empty target"):
        compute_loss(model, [_bundle(target=())])


# training and decoding --------------------------------------------------------


def test_training_reduces_loss():
    cfg = _tiny_cfg(d_model=32, n_heads=4, ffn_dim=64)
    data = planted_copy_task(50, seed=3)
    m = init_model(cfg)
    with torch.no_grad():
        before = float(compute_loss(m, data).total)
    train(m, data, cfg, epochs=1)
    with torch.no_grad():
        after = float(compute_loss(m, data).total)
    assert after < before


def test_training_is_deterministic():
    cfg = _tiny_cfg()
    data = planted_copy_task(20, seed=4)
    traces = []
    for _ in range(2):
        m = init_model(cfg)
        traces.append(train(m, data, cfg, epochs=2).trace)
    assert traces[0] == traces[1] and len(traces[0]) == 6


def test_best_validation_epoch_is_restored():
    cfg = _tiny_cfg()
    data = planted_copy_task(16, seed=5)
    m = init_model(cfg)
    res = train(m, data, cfg, data[:4], epochs=3)
    assert res.best_epoch in (0, 1, 2)
    assert max(e["valid_em"] for e in res.epochs) == res.best_valid_em


def test_on_step_can_stop_early():
    cfg = _tiny_cfg()
    m = init_model(cfg)
    res = train(m, planted_copy_task(40, seed=7), cfg, epochs=5, on_step=lambda rec: rec["step"] == 6)
    assert len(res.trace) == 7 and len(res.epochs) == 2


def test_nan_loss_aborts_with_step():
    cfg = _tiny_cfg()
    m = init_model(cfg)
    with torch.no_grad():
        m.out_proj.bias.fill_(float("nan"))
    with pytest.raises(FloatingPointError, match="step 0"):
        train(m, planted_copy_task(4), cfg, epochs=1)


def test_empty_training_set_rejected(model):
    with pytest.raises(ValueError):
        train(model, [], epochs=1)


def test_generate_zero_length(model):
    assert generate(model, [_bundle(), _bundle()], 0) == [(), ()]


def test_memorises_single_pair():
    cfg = _tiny_cfg(d_model=32, n_heads=4, ffn_dim=64, batch_size=1)
    b = _bundle(target=(15, 16, 17))
    m = init_model(cfg)
    train(m, [b], cfg, epochs=150)
    assert generate(m, [b], 10) == [(15, 16, 17)]


# gradients -------------------------------------------------------------------


def test_gradcheck_on_linear_toy():
    g = torch.Generator().manual_seed(0)
    W = torch.randn(3, 4, dtype=torch.float64, generator=g, requires_grad=True)
    x = torch.randn(4, 5, dtype=torch.float64, generator=g)
    y = torch.randn(3, 5, dtype=torch.float64, generator=g)
    assert check_gradients(lambda: ((W @ x - y) ** 2).sum(), [W], eps=1e-4, n_samples=12) < 1e-8


def test_gradcheck_rejects_bad_eps():
    W = torch.zeros(2, dtype=torch.float64, requires_grad=True)
    with pytest.raises(ValueError):
        check_gradients(lambda: W.sum(), [W], eps=1e-2)


# adaptation ------------------------------------------------------------------


def test_adaptation_alternates_inputs():
    assert adaptation_kinds(4) == ["code", "ast", "code", "ast"]
    assert adaptation_kinds(1) == ["code"]
    corpus = bugfix_corpus(4, seed=0)
    vocab = Vocabulary.build(t for p in corpus for t in p)
    bundles = adaptation_bundles(corpus, vocab, 16)
    assert [b.slots()[0].kind for b in bundles] == adaptation_kinds(4)
    assert all(b.n_slots == 1 and len(b.slots()[0]) <= 16 for b in bundles)


# checkpoints and estimator -----------------------------------------------------


def test_checkpoint_round_trip(tmp_path, model):
    save_checkpoint(tmp_path / "m.ckpt", model.state_dict(), model.cfg, {"epoch": 3})
    state, cfg, extra = load_checkpoint(tmp_path / "m.ckpt")
    assert cfg == model.cfg and extra == {"epoch": 3}
    for k, v in model.state_dict().items():
        assert torch.equal(state[k], v)


def test_checkpoint_bad_magic(tmp_path):
    (tmp_path / "x.ckpt").write_bytes(b"NOTACKPT" + bytes(20))
    with pytest.raises(ValueError, match="not a checkpoint"):
        load_checkpoint(tmp_path / "x.ckpt")


def test_estimator_params_and_clone():
    est = FiDRepairModel(vocab_size=48, d_model=16, n_heads=2, segment_len=8)
    params = est.get_params()
    assert params["d_model"] == 16 and params["warm_start"] is False
    assert clone(est).get_params() == params
    assert est.set_params(max_segments=3).config.max_segments == 3


def test_estimator_fit_predict_save(tmp_path):
    est = FiDRepairModel(vocab_size=48, d_model=16, n_heads=2, n_enc_layers=1, n_dec_layers=1, ffn_dim=32,
                         segment_len=8, max_segments=4, max_target_len=8, batch_size=8, learning_rate=1e-3)
    data = planted_copy_task(8, seed=6)
    with pytest.raises(NotFittedError):
        est.predict(data)
    est.fit(data, epochs=1)
    preds = est.predict(data)
    assert len(preds) == 8 and 0.0 <= est.score(data) <= 1.0
    est.save(tmp_path / "e.ckpt")
    again = FiDRepairModel.load(tmp_path / "e.ckpt")
    assert again.predict(data) == preds
    rel = est.predict_relevance([_bundle()])
    # the K=4 budget drops the label-0 pair
    assert rel[0].shape == (1,) and np.all((rel[0] > 0) & (rel[0] < 1))


def test_estimator_validates_input():
    est = FiDRepairModel(vocab_size=48, d_model=16, n_heads=2, segment_len=8)
    with pytest.raises(TypeError):
        est.fit(["not a bundle"])
    with pytest.raises(ValueError):
        est.fit([ContextBundle(code_segments=(_seg(9),), target_tokens=(1,))])
