import numpy as np
import pytest

from vernet import diffcore as dc
from vernet.encoder import (CheckpointVersionError, EncoderConfig, encode_batch, encode_group, encode_node,
                            init_encoder_params, load_checkpoint, save_checkpoint)
from vernet.textpipe import build_vocab, encode_pair

from conftest import numeric_grad, rel_err

VOCAB = build_vocab([["a", "b", "c", "d", "e"]])


def cfg(**kw):
    base = dict(vocab_size=len(VOCAB), d_model=8, layers=2, heads=2, ff_dim=16, max_positions=32, init_std=0.3)
    base.update(kw)
    return EncoderConfig(**base)


def lay(src, hyp):
    return encode_pair(src.split(), hyp.split(), VOCAB)


def test_shape_contract():
    c = cfg()
    node = encode_node(lay("a b c", "a d"), init_encoder_params(c), c)
    assert node.H.shape == (3 + 2 + 3, 8)


def test_determinism_same_seed():
    c = cfg()
    l = lay("a b", "c d e")
    h1 = encode_node(l, init_encoder_params(c), c).H.data
    h2 = encode_node(l, init_encoder_params(c), c).H.data
    assert np.array_equal(h1, h2)


def test_zero_layers_is_embedding_sum():
    c = cfg(layers=0)
    p = init_encoder_params(c)
    l = lay("a b", "c")
    H = encode_node(l, p, c).H.data
    tok, pos, seg = p["emb.token"].data, p["emb.position"].data, p["emb.segment"].data
    expected = np.array([tok[t] + pos[i] + seg[s] for i, (t, s) in enumerate(zip(l.ids, l.segments))])
    np.testing.assert_allclose(H, expected, rtol=0, atol=1e-15)


def test_group_cases():
    c = cfg()
    p = init_encoder_params(c)
    assert len(encode_group([lay("a b", "c")], p, c)) == 1
    nodes = encode_group([lay("a b", "c d"), lay("a b", "e"), lay("a b", "c d")], p, c)
    assert np.array_equal(nodes[0].H.data, nodes[2].H.data)
    hyps = ["a", "b c d", "", "e e e e e", "a b"]
    nodes = encode_group([lay("a b c", h) for h in hyps], p, c)
    assert [n.H.shape[0] for n in nodes] == [3 + len(h.split()) + 3 for h in hyps]


def test_purity_batch_equals_single():
    c = cfg()
    p = init_encoder_params(c)
    layouts = [lay("a b c", "d"), lay("a b c", "e e e e e e"), lay("a b c", "")]
    H, mask = encode_batch(layouts, p, c)
    for r, l in enumerate(layouts):
        alone = encode_node(l, p, c).H.data
        np.testing.assert_allclose(H.data[r, :len(l)], alone, atol=1e-12)
        assert np.all(H.data[r, len(l):] == 0.0)


def test_rejects_overlong_and_bad_ids():
    c = cfg(max_positions=5)
    with pytest.raises(dc.ContractError):
        encode_node(lay("a b c", "d"), init_encoder_params(c), c)
    c2 = cfg(vocab_size=4)
    with pytest.raises(dc.ContractError):
        encode_node(lay("a", "b"), init_encoder_params(c2), c2)


def test_gradient_flow_and_finite_differences():
    c = cfg(layers=1, d_model=4, ff_dim=6, max_positions=12, vocab_size=len(VOCAB))
    p = init_encoder_params(c)
    layouts = [lay("a b", "c"), lay("a b", "d e")]
    probe = np.random.default_rng(2).normal(size=(2, 7, 4))

    def loss():
        H, _ = encode_batch(layouts, p, c)
        return dc.tsum(dc.mul(H, probe))

    for t in p.values():
        t.grad = None
    dc.backward(loss())
    for name, t in p.items():
        if name == "emb.token":
            used = np.unique(np.concatenate([l.ids for l in layouts]))
            assert np.any(t.grad[used] != 0), name
        elif name == "emb.position":
            assert np.any(t.grad[:7] != 0), name
        else:
            assert np.any(t.grad != 0), name
        num = numeric_grad(lambda: loss().item(), t.data)
        assert rel_err(t.grad, num) < 1e-4, name


def test_checkpoint_round_trip_and_bytes(tmp_path):
    arrays = {"a": np.arange(6.0).reshape(2, 3), "b": np.array([1, 2], dtype=np.int64)}
    save_checkpoint(tmp_path / "x.ckpt", arrays, {"note": "hi"})
    save_checkpoint(tmp_path / "y.ckpt", arrays, {"note": "hi"})
    assert (tmp_path / "x.ckpt").read_bytes() == (tmp_path / "y.ckpt").read_bytes()
    got, meta = load_checkpoint(tmp_path / "x.ckpt")
    assert meta["note"] == "hi"
    for k in arrays:
        assert np.array_equal(got[k], arrays[k])


def test_checkpoint_version_mismatch(tmp_path):
    import vernet.encoder as enc

    path = tmp_path / "v.ckpt"
    old = enc.CHECKPOINT_VERSION
    try:
        enc.CHECKPOINT_VERSION = 99
        save_checkpoint(path, {"a": np.zeros(1)}, {})
    finally:
        enc.CHECKPOINT_VERSION = old
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path)
