import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covnet import tensor as T
from covnet.checkpoint import load_checkpoint, save_checkpoint
from covnet.errors import ConfigError, ShapeError
from covnet.model import (
    VARIANTS,
    CovNet,
    Fire,
    ModelConfig,
    MultiHeadAttention,
    TailoredFFN,
    conv_flops,
    estimate_flops,
    linear_flops,
    multihead_attention,
)
from covnet.tensor import Tensor

from conftest import numeric_grad, rel_error


def toy_cfg(**kw):
    base = dict(dtype="float64", cipn_vector_len=8)
    base.update(kw)
    return ModelConfig.for_grid(4, 4, 4, **base)


def randomize(module, rng, scale=0.5):
    """Give every parameter (zero biases included) random values so no path is trivially dead."""
    for _, p in module.named_parameters():
        p.assign_(scale * rng.standard_normal(p.shape))


def toy_inputs(cfg, rng, batch=2):
    h = rng.standard_normal((batch, cfg.seq_len, cfg.n_t)) * 0.2
    q = rng.standard_normal((batch, cfg.seq_len, cfg.n_t)) * 0.4
    c = rng.standard_normal((batch, 4, cfg.n_t, cfg.n_t))
    return h, q, c


def check_param_grads(params, loss_fn, tol=1e-4, max_entries=6, eps=1e-6):
    """Finite differences over a sample of entries of every parameter tensor."""
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    auto = [p.grad for p in params]
    arrays = [p.numpy() for p in params]

    def f():
        for p, a in zip(params, arrays):
            p.assign_(a)
        with T.no_grad():
            return loss_fn().item()

    numeric = numeric_grad(f, arrays, eps=eps, max_entries=max_entries, rng=np.random.default_rng(0))
    for p, a in zip(params, arrays):
        p.assign_(a)
    # some gradients vanish exactly (key biases under softmax shift invariance),
    # so compare all parameters jointly
    auto = np.concatenate([a.ravel() for a in auto])
    numeric = np.concatenate([n.ravel() for n in numeric])
    err = rel_error(auto, numeric)
    assert err < tol, err


def weighted(out):
    w = np.random.default_rng(list(out.shape) + [11]).standard_normal(out.shape)
    return (out * w).sum()


# attention


def attention_loop_oracle(xq, xkv, m, causal=False):
    """Per-head loop over explicit column blocks, independent of the batched path."""
    d, h = m.d, m.n_heads
    dk = d // h
    q = xq @ m.w_q.data + m.b_q.data
    k = xkv @ m.w_k.data + m.b_k.data
    v = xkv @ m.w_v.data + m.b_v.data
    outs = []
    for n in range(h):
        cols = slice(n * dk, (n + 1) * dk)
        logits = q[:, cols] @ k[:, cols].T / math.sqrt(dk)
        if causal:
            logits = np.where(np.triu(np.ones(logits.shape, bool), 1), -np.inf, logits)
        w = np.exp(logits - logits.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        outs.append(w @ v[:, cols])
    return np.concatenate(outs, axis=1) @ m.w_o.data + m.b_o.data


@pytest.mark.parametrize("causal", [False, True])
def test_attention_matches_loop_oracle(rng, causal):
    m = MultiHeadAttention(8, 2, rng, "float64")
    randomize(m, rng)
    xq, xkv = rng.standard_normal((4, 8)), rng.standard_normal((4, 8))
    out = multihead_attention(Tensor(xq), Tensor(xkv), m, causal=causal).numpy()
    np.testing.assert_allclose(out, attention_loop_oracle(xq, xkv, m, causal), atol=1e-10)


def test_attention_single_token_is_value_path(rng):
    m = MultiHeadAttention(8, 2, rng, "float64")
    x = rng.standard_normal((1, 8))
    out = m(Tensor(x), Tensor(x)).numpy()
    np.testing.assert_allclose(out, (x @ m.w_v.data) @ m.w_o.data, atol=1e-12)


def test_attention_zero_input_zero_output(rng):
    m = MultiHeadAttention(8, 4, rng, "float64")
    assert np.all(m(Tensor(np.zeros((5, 8))), Tensor(np.zeros((3, 8)))).numpy() == 0)


def test_causal_rows_ignore_future_inputs(rng):
    m = MultiHeadAttention(8, 2, rng, "float64")
    x = rng.standard_normal((6, 8))
    base = m(Tensor(x), Tensor(x), causal=True).numpy()
    for i in range(5):
        y = x.copy()
        y[i + 1 :] += rng.standard_normal(y[i + 1 :].shape)
        out = m(Tensor(y), Tensor(y), causal=True).numpy()
        np.testing.assert_allclose(out[: i + 1], base[: i + 1], atol=1e-12)
        assert not np.allclose(out[i + 1 :], base[i + 1 :])


def test_attention_shape_errors(rng):
    with pytest.raises(ConfigError):
        MultiHeadAttention(6, 4, rng)
    m = MultiHeadAttention(8, 2, rng)
    with pytest.raises(ShapeError):
        m(Tensor(np.zeros((2, 8))), Tensor(np.zeros((2, 6))))


def test_attention_gradients(rng):
    m = MultiHeadAttention(8, 2, rng, "float64")
    randomize(m, rng)
    xq, xkv = Tensor(rng.standard_normal((5, 8))), Tensor(rng.standard_normal((3, 8)))
    check_param_grads(m.parameters(), lambda: weighted(m(xq, xkv)), max_entries=None)
    x = Tensor(rng.standard_normal((5, 8)))
    check_param_grads(m.parameters(), lambda: weighted(m(x, x, causal=True)), max_entries=None)


# tailored FFN


def test_ffn_zero_weights_is_identity(rng):
    f = TailoredFFN(6, 4, 8, 12, rng, dtype="float64")
    for name, p in f.named_parameters():
        if "norm" not in name:
            p.assign_(np.zeros(p.shape))
    x = rng.standard_normal((6, 4))
    np.testing.assert_array_equal(f(Tensor(x)).numpy(), x)


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31))
def test_ffn_shape_preserved(n_a, n_t, seed):
    rng = np.random.default_rng(seed)
    f = TailoredFFN(2 * n_a, n_t, 3, 5, rng, dtype="float64")
    x = rng.standard_normal((3, 2 * n_a, n_t))
    assert f(Tensor(x)).shape == (3, 2 * n_a, n_t)


def test_ffn_delay_stage_is_row_permutation_equivariant(rng):
    f = TailoredFFN(6, 4, 8, 12, rng, dtype="float64")
    randomize(f, rng)
    x = rng.standard_normal((6, 4))
    perm = rng.permutation(6)
    a = f.stage_delay(Tensor(x[perm])).numpy()
    b = f.stage_delay(Tensor(x)).numpy()[perm]
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_ffn_shape_error(rng):
    f = TailoredFFN(6, 4, 8, 12, rng)
    with pytest.raises(ShapeError):
        f(Tensor(np.zeros((4, 6))))


def test_ffn_gradients(rng):
    f = TailoredFFN(6, 4, 8, 12, rng, dtype="float64")
    randomize(f, rng)
    x = Tensor(rng.standard_normal((2, 6, 4)))
    check_param_grads(f.parameters(), lambda: weighted(f(x)), max_entries=None)


# fire module


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 6), st.integers(1, 6), st.integers(2, 6))
def test_fire_output_channels(c_in, squeeze, e1, e3, side):
    fire = Fire(c_in, squeeze, e1, e3, np.random.default_rng(0), "float64")
    out = fire(Tensor(np.ones((c_in, side, side))))
    assert fire.out_channels == e1 + e3
    assert out.shape == (e1 + e3, side, side)


# shapes


@pytest.mark.parametrize("cr,m", [(32, 64), (64, 32), (128, 16), (256, 8)])
def test_shape_closure_full_grid(cr, m):
    cfg = ModelConfig.for_grid(32, 32, cr)
    assert cfg.codeword_len == m and cfg.cr == cr
    net = CovNet(cfg, 0)
    rng = np.random.default_rng(1)
    h = rng.standard_normal((2, 64, 32)) * 0.03
    q = rng.standard_normal((2, 64, 32)) * 0.2
    c = rng.standard_normal((2, 4, 32, 32))
    with T.no_grad():
        v = net.encode(h)
        v_c = net.covariance_vector(q, c)
        out = net.decode(v, v_c)
    assert v.shape == (2, m) and v_c.shape == (2, 2048) and out.shape == (2, 64, 32)


def test_encode_is_deterministic(rng):
    cfg = toy_cfg()
    a, b = CovNet(cfg, 3), CovNet(cfg, 3)
    h, _, _ = toy_inputs(cfg, rng)
    assert a.encode(h).numpy().tobytes() == b.encode(h).numpy().tobytes()


def test_zero_inputs_give_zero_covariance_vector():
    cfg = toy_cfg()
    net = CovNet(cfg, 0)
    v_c = net.covariance_vector(np.zeros((1, 8, 4)), np.zeros((1, 4, 4, 4)))
    assert np.all(v_c.numpy() == 0)


@pytest.mark.parametrize("variant", VARIANTS)
def test_variants_are_well_formed(variant, rng):
    cfg = toy_cfg(variant=variant)
    net = CovNet(cfg, 0)
    h, q, c = toy_inputs(cfg, rng)
    out = net(h, q, c)
    assert out.shape == h.shape and np.all(np.isfinite(out.numpy()))
    if variant == "no_covariance_baseline":
        assert net.cipn is None and np.all(net.covariance_vector(q, c).numpy() == 0)
        q2, c2 = toy_inputs(cfg, np.random.default_rng(99))[1:]
        np.testing.assert_array_equal(net(h, q2, c2).numpy(), out.numpy())


def test_input_shape_errors():
    net = CovNet(toy_cfg(), 0)
    with pytest.raises(ShapeError):
        net.encode(np.zeros((1, 4, 4)))
    with pytest.raises(ShapeError):
        net.covariance_vector(np.zeros((1, 8, 4)), np.zeros((1, 2, 4, 4)))
    with pytest.raises(ShapeError):
        net.decode(np.zeros((1, 7)), np.zeros((1, 32)))


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(variant="other")
    with pytest.raises(ConfigError):
        ModelConfig(n_heads=3)
    with pytest.raises(ConfigError):
        ModelConfig(codeword_len=0)
    cfg = toy_cfg(variant="modified_covnet")
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


# parameters and checkpoints


@pytest.mark.parametrize("variant", VARIANTS)
def test_parameter_names_unique(variant):
    net = CovNet(toy_cfg(variant=variant), 0)
    names = [n for n, _ in net.named_parameters()]
    ids = [id(p) for _, p in net.named_parameters()]
    assert len(names) == len(set(names)) and len(ids) == len(set(ids))
    assert net.num_parameters() == sum(p.size for p in net.parameters())


def test_checkpoint_forward_bit_identical(tmp_path, rng):
    cfg = ModelConfig.for_grid(4, 4, 4, cipn_vector_len=8)
    net = CovNet(cfg, 5)
    randomize(net, rng, 0.3)
    h, q, c = (a.astype(np.float32) for a in toy_inputs(cfg, rng))
    before = net.predict(h, q, c)
    save_checkpoint(tmp_path / "m.cvnt", net.state_dict())
    other = CovNet(cfg, 6)
    other.load_state_dict(load_checkpoint(tmp_path / "m.cvnt"))
    assert other.predict(h, q, c).tobytes() == before.tobytes()


def test_load_state_dict_rejects_mismatch():
    net = CovNet(toy_cfg(), 0)
    state = net.state_dict()
    name = next(iter(state))
    with pytest.raises((ShapeError, KeyError, ValueError)):
        net.load_state_dict({**state, name: np.zeros((1, 1))})


# gradients of composite blocks on the 4 x 4 toy grid


def test_encoder_gradients(rng):
    net = CovNet(toy_cfg(), 0)
    randomize(net.encoder, rng, 0.4)
    h, _, _ = toy_inputs(net.cfg, rng)
    check_param_grads(net.encoder.parameters(), lambda: weighted(net.encode(h)))


@pytest.mark.parametrize("variant", ["covnet", "modified_covnet"])
def test_cipn_gradients(variant, rng):
    net = CovNet(toy_cfg(variant=variant), 0)
    randomize(net.cipn, rng, 0.4)
    _, q, c = toy_inputs(net.cfg, rng)
    check_param_grads(net.cipn.parameters(), lambda: weighted(net.covariance_vector(q, c)))


def test_decoder_gradients(rng):
    net = CovNet(toy_cfg(), 0)
    randomize(net.decoder, rng, 0.4)
    v = Tensor(rng.standard_normal((2, net.cfg.codeword_len)))
    v_c = Tensor(rng.standard_normal((2, net.cfg.csi_len)))
    check_param_grads(net.decoder.parameters(), lambda: weighted(net.decode(v, v_c)))


@pytest.mark.parametrize("variant", VARIANTS)
def test_end_to_end_mse_gradients(variant, rng):
    net = CovNet(toy_cfg(variant=variant), 0)
    randomize(net, rng, 0.3)
    h, q, c = toy_inputs(net.cfg, rng)

    def loss():
        err = net(h, q, c) - Tensor(h)
        return (err * err).sum() * (1.0 / h.shape[0])

    check_param_grads(net.parameters(), loss, max_entries=4)


# FLOPs


def test_flops_hand_counts():
    assert linear_flops(1, 64, 32) == 4096
    assert conv_flops(2, 3, 3, 3, 3, 3) == 972
    # self-attention on 4 tokens of width 8: four 4x8x8 projections plus 2 * (2*4*4*8)
    from covnet.model import attention_flops

    assert attention_flops(4, 4, 8) == 4 * 2 * 4 * 8 * 8 + 2 * 2 * 4 * 4 * 8


def test_flops_match_engine_conv_output_sizes():
    cfg = ModelConfig.for_grid(32, 32, 32)
    flops = estimate_flops(cfg)
    assert flops["total"] == flops["encoder"] + flops["cipn"] + flops["decoder"]
    assert all(v > 0 for v in flops.values())


@pytest.mark.parametrize("variant", VARIANTS)
def test_flops_non_increasing_in_cr(variant):
    totals = [estimate_flops(ModelConfig.for_grid(32, 32, cr, variant=variant))["total"] for cr in (32, 64, 128, 256)]
    assert all(b <= a for a, b in zip(totals, totals[1:]))
    assert totals[0] > totals[-1]
