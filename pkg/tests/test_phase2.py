import numpy as np
import pytest
from conftest import pivot_records

from posadv import nn
from posadv.errors import DimensionMismatch, SingleClassDataset, UntrainedModel
from posadv.phase1 import AdvDatasetRecord
from posadv.phase2 import (
    AdvNetConfig,
    TwoBranchNet,
    build_adv_net,
    dedupe_records,
    load_adv_net,
    save_adv_net,
    score,
    train_adv_net,
)
from posadv.text import build_vocab, random_embeddings

PIVOT_CONFIG = AdvNetConfig(max_len=20, embedding_dim=16, filters=16, kernel_size=3, fusion_width=16,
                            dropout_rate=0.2, lr=3e-3, batch_size=32, max_epochs=20, patience=3, seed=0)


def pivot_net(records, config=PIVOT_CONFIG):
    vocab = build_vocab([r.original.tokens for r in records], 1)
    return build_adv_net(config, vocab, random_embeddings(vocab, config.embedding_dim, seed=config.seed))


def held_out_accuracy(train_n=1600, test_n=600, seed=0):
    train = pivot_records(train_n, seed=seed)
    test = pivot_records(test_n, seed=seed + 1000)
    net = train_adv_net(pivot_net(train + test), train)
    p = score(net, [r.original.tokens for r in test], [r.manipulated for r in test])
    y = np.array([r.adv_label for r in test])
    return float(np.mean((p >= 0.5) == y)), net


@pytest.fixture(scope="module")
def pivot_result():
    return held_out_accuracy()


def test_pivot_oracle_learnable(pivot_result):
    acc, _ = pivot_result
    assert acc >= 0.95


def test_fusion_width():
    vocab = build_vocab([["a"]], 1)
    net = build_adv_net(AdvNetConfig(filters=100, embedding_dim=8), vocab, random_embeddings(vocab, 8))
    assert net.net.fusion_input_width == 200


def test_dimension_mismatch():
    vocab = build_vocab([["a"]], 1)
    with pytest.raises(DimensionMismatch):
        build_adv_net(AdvNetConfig(embedding_dim=8), vocab, random_embeddings(vocab, 4))


def test_same_seed_same_init():
    recs = pivot_records(10)
    a, b = pivot_net(recs), pivot_net(recs)
    for k in a.net.params:
        np.testing.assert_array_equal(a.net.params[k], b.net.params[k])
    assert not np.array_equal(a.net.params["conv_a_w"], a.net.params["conv_b_w"])


def test_empty_pair_finite(pivot_result):
    _, net = pivot_result
    p = score(net, [[]], [[]])
    assert np.isfinite(p).all() and 0 < p[0] < 1


def test_score_deterministic_and_ordered(pivot_result):
    _, net = pivot_result
    recs = pivot_records(20, seed=77)
    a = [r.original.tokens for r in recs]
    b = [r.manipulated for r in recs]
    full = score(net, a, b)
    np.testing.assert_array_equal(full, score(net, a, b))
    np.testing.assert_allclose(score(net, a[::-1], b[::-1]), full[::-1], atol=1e-6)


def test_branch_slots_not_interchangeable(pivot_result):
    _, net = pivot_result
    recs = [r for r in pivot_records(200, seed=5) if r.adv_label == 1][:20]
    a = [r.original.tokens for r in recs]
    b = [r.manipulated for r in recs]
    assert not np.allclose(score(net, a, b), score(net, b, a))


def test_identity_pairs_score_low(pivot_result):
    _, net = pivot_result
    recs = pivot_records(100, seed=6)
    same = score(net, [r.original.tokens for r in recs], [r.original.tokens for r in recs])
    assert np.mean(same) < 0.5


def test_single_class_rejected():
    recs = [r for r in pivot_records(400) if r.adv_label == 0]
    with pytest.raises(SingleClassDataset):
        train_adv_net(pivot_net(recs), recs)


def test_untrained_score():
    recs = pivot_records(5)
    with pytest.raises(UntrainedModel):
        score(pivot_net(recs), [recs[0].original.tokens], [recs[0].manipulated])


def test_dedupe_pairs():
    recs = pivot_records(5)
    r = recs[0]
    twin = AdvDatasetRecord(r.original, 7, r.manipulated, r.deleted, r.orig_label, r.pred_label, r.adv_pred, r.adv_label)
    out = dedupe_records([r, twin] + recs[1:])
    assert len(out) == 5 and out[0].replication == 0


def test_embedding_frozen(pivot_result):
    _, net = pivot_result
    assert "embedding" in net.net.frozen


def test_checkpoint_roundtrip(pivot_result, tmp_path):
    _, net = pivot_result
    save_adv_net(net, tmp_path)
    header, _ = nn.load_checkpoint(tmp_path / "adv_net.ckpt")
    groups = {t["name"]: t["group"] for t in header["tensors"]}
    assert groups["conv_a_w"] == "branch_a" and groups["conv_b_w"] == "branch_b"
    assert groups["fuse_w"] == "fusion" and groups["embedding"] == "shared"
    again = load_adv_net(tmp_path, net.vocab)
    recs = pivot_records(10, seed=3)
    a, b = [r.original.tokens for r in recs], [r.manipulated for r in recs]
    np.testing.assert_array_equal(score(again, a, b), score(net, a, b))


def test_two_branch_gradients():
    rng = np.random.default_rng(0)
    cfg = AdvNetConfig(max_len=6, embedding_dim=3, filters=3, kernel_size=3, fusion_width=4, dropout_rate=0.5, seed=1)
    net = TwoBranchNet(rng.normal(0, 0.5, (9, 3)), cfg)
    for k in list(net.params):
        net.params[k] = net.params[k].astype(np.float64) + (0 if k == "embedding" else rng.normal(0, 0.2, net.params[k].shape))
    ids = (rng.integers(0, 9, (4, 6)), rng.integers(0, 9, (4, 6)))
    y = np.array([0.0, 1.0, 1.0, 0.0])

    def loss():
        return nn.bce_loss(y, net.forward(ids, train=True, rng=np.random.default_rng(3)))[0]

    p = net.forward(ids, train=True, rng=np.random.default_rng(3))
    grads = net.backward(nn.bce_loss(y, p)[1])
    params = {k: v for k, v in net.params.items() if k != "embedding"}
    res = nn.grad_check(loss, params, grads)
    assert res.max_rel_error < 1e-4, res
