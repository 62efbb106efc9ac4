"""Autodiff engine: op gradients against finite differences, module contracts."""
import numpy as np
import pytest

import panorect.tensorcore as tc
from panorect.tensorcore import engine as E
from panorect.tensorcore.checkpoint import restore_parameters
from panorect.resample import bilinear_sample
from panorect.errors import DataError

from helpers import rng


def t64(a, grad=True):
    return tc.Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


# ---------------------------------------------------------------------------
# per-op gradient checks

def test_linear_gradcheck():
    r = rng(10)
    x = t64(r.normal(size=(4, 5)))
    w = t64(r.normal(size=(3, 5)))
    b = t64(r.normal(size=(3,)))
    tgt = t64(r.normal(size=(4, 3)), grad=False)
    rep = tc.gradcheck(lambda x, w, b: tc.l2_mse(tc.linear(x, w, b), tgt), [x, w, b])
    assert rep.max_err < 1e-6


def test_conv_gradcheck_stride_groups_circular():
    r = rng(11)
    x = t64(r.normal(size=(4, 6, 8)))
    w = t64(r.normal(size=(6, 2, 3, 3)))
    b = t64(r.normal(size=(6,)))
    tgt = t64(r.normal(size=(6, 3, 4)), grad=False)
    rep = tc.gradcheck(
        lambda x, w, b: tc.l1(tc.conv2d(x, w, b, stride=2, groups=2), tgt), [x, w, b]
    )
    assert rep.max_err < 1e-6


def test_conv_gradcheck_zero_pad():
    r = rng(12)
    x = t64(r.normal(size=(2, 5, 7)))
    w = t64(r.normal(size=(3, 2, 3, 3)))
    tgt = t64(r.normal(size=(3, 5, 7)), grad=False)
    rep = tc.gradcheck(
        lambda x, w: tc.l2_mse(tc.conv2d(x, w, pad_mode=tc.nn.PAD_ZERO), tgt), [x, w]
    )
    assert rep.max_err < 1e-6


def test_gelu_gradcheck():
    r = rng(13)
    x = t64(r.normal(size=(6, 7)))
    rep = tc.gradcheck(lambda x: (E.gelu(x) * E.gelu(x)).mean(), [x])
    assert rep.max_err < 1e-4


def test_layer_norm_gradcheck_both_axes():
    r = rng(14)
    xt = t64(r.normal(size=(5, 8)))
    w = t64(r.normal(size=(8,)))
    b = t64(r.normal(size=(8,)))
    rep = tc.gradcheck(
        lambda x, w, b: (tc.layer_norm(x, w, b, axis=-1) ** 2).mean(), [xt, w, b]
    )
    assert rep.max_err < 1e-4
    xc = t64(r.normal(size=(4, 3, 5)))
    rep = tc.gradcheck(lambda x: (tc.layer_norm(x, axis=0) ** 2).mean(), [xc])
    assert rep.max_err < 1e-4


def test_batch_norm_gradcheck_train_mode():
    r = rng(15)
    bn = tc.BatchNorm2d(4, dtype=np.float64)
    x = t64(r.normal(size=(4, 3, 5)))
    tgt = t64(r.normal(size=(4, 3, 5)), grad=False)
    rep = tc.gradcheck(lambda x: tc.l2_mse(bn(x), tgt), [x])
    assert rep.max_err < 1e-4


def test_multi_head_attention_gradcheck():
    # 6 tokens of width 12, 3 heads
    r = rng(16)
    mha = tc.MultiHeadAttention(12, 3, r, dtype=np.float64)
    x = t64(r.normal(size=(6, 12)))
    params = [p for _, p in mha.named_parameters()]
    tgt = t64(r.normal(size=(6, 12)), grad=False)
    rep = tc.gradcheck(
        lambda x, *ps: tc.l1(mha(x), tgt), [x] + params, max_entries=60, rng=rng(17)
    )
    assert rep.max_err < 1e-3


def test_grid_sample_gradcheck():
    r = rng(18)
    img = t64(r.uniform(0.1, 0.9, size=(3, 8, 16)))
    u = r.uniform(0.0, 15.0, size=(5, 7))
    v = r.uniform(0.3, 6.7, size=(5, 7))
    # keep probes away from integer sampling points: the kernel is only
    # piecewise smooth there and finite differences straddle the kink
    u = np.where(np.abs(u - np.round(u)) < 0.1, u + 0.17, u)
    v = np.where(np.abs(v - np.round(v)) < 0.1, v + 0.17, v)
    co = t64(np.stack([u, v]))
    tgt = t64(r.normal(size=(3, 5, 7)), grad=False)
    rep = tc.gradcheck(
        lambda i, c: tc.l2_mse(tc.grid_sample(i, c), tgt), [img, co], eps=1e-5
    )
    assert rep.max_err < 1e-3


def test_softmax_gradcheck():
    r = rng(19)
    x = t64(r.normal(size=(4, 6)))
    tgt = t64(r.normal(size=(4, 6)), grad=False)
    rep = tc.gradcheck(lambda x: tc.l2_mse(E.softmax(x, axis=-1), tgt), [x])
    assert rep.max_err < 1e-4


def test_elementwise_composite_gradcheck():
    r = rng(20)
    x = t64(r.uniform(-0.8, 0.8, size=(5, 6)))
    def f(x):
        y = E.elu(x) + E.sigmoid(x) + E.sin(x) * E.cos(x) + E.exp(0.3 * x)
        y = y + E.asin(E.clip(x, -0.9, 0.9)) + E.log(E.clip_min(x + 2.0, 1e-3))
        return (y * y).mean()
    rep = tc.gradcheck(f, [x])
    assert rep.max_err < 1e-4


def test_atan2_gradcheck():
    r = rng(21)
    a = t64(r.normal(size=(9,)))
    b = t64(r.normal(size=(9,)) + 2.5)
    rep = tc.gradcheck(lambda a, b: tc.atan2(a, b).sum(), [a, b])
    assert rep.max_err < 1e-6


def test_structural_ops_gradcheck():
    r = rng(22)
    m = r.normal(size=(4, 4)) > 0
    a = t64(r.normal(size=(4, 4)))
    b = t64(r.normal(size=(4, 4)))
    def f(a, b):
        y = tc.where_mask(m, a, b)
        y = y + tc.concat([a, b], axis=0)[:4] + tc.stack([a, b], axis=0).sum(axis=0)
        return (y.reshape(2, 8).transpose() ** 2).mean()
    rep = tc.gradcheck(f, [a, b])
    assert rep.max_err < 1e-6


def test_take_accumulates_duplicate_indices():
    x = t64(np.array([1.0, 2.0, 3.0]))
    y = x[np.array([0, 0, 2])].sum()
    tc.backward(y)
    assert np.array_equal(x.grad, [2.0, 0.0, 1.0])


# ---------------------------------------------------------------------------
# exact contracts

def test_conv_circular_shift_equivariance_bit_exact():
    r = rng(23)
    x = r.normal(size=(3, 8, 16))
    w = r.normal(size=(5, 3, 3, 3))
    out = tc.conv2d(tc.Tensor(x), tc.Tensor(w)).data
    for s in (1, 5, 16):
        shifted = tc.conv2d(tc.Tensor(np.roll(x, s, axis=2)), tc.Tensor(w)).data
        assert np.array_equal(shifted, np.roll(out, s, axis=2))


def test_conv_1x1_identity():
    r = rng(24)
    x = r.normal(size=(4, 6, 8))
    w = np.eye(4)[:, :, None, None]
    assert np.array_equal(tc.conv2d(tc.Tensor(x), tc.Tensor(w)).data, x)


def test_conv_2x2_stride2_shape():
    r = rng(25)
    x = tc.Tensor(r.normal(size=(8, 16, 32)).astype(np.float32))
    w = tc.Tensor(r.normal(size=(32, 8, 2, 2)).astype(np.float32))
    assert tc.conv2d(x, w, stride=2).data.shape == (32, 8, 16)


def test_pad2d_modes():
    x = tc.Tensor(np.arange(12, dtype=np.float64).reshape(1, 3, 4))
    z = tc.pad2d(x, (1, 1, 1, 1), mode=tc.nn.PAD_ZERO).data
    assert z.shape == (1, 5, 6) and z[0, 0].sum() == 0 and z[0, :, 0].sum() == 0
    c = tc.pad2d(x, (1, 1, 1, 1), mode=tc.nn.PAD_CIRC_H).data
    assert np.array_equal(c[0, 1:4, 0], x.data[0, :, -1])   # left column wraps
    assert np.array_equal(c[0, 1:4, -1], x.data[0, :, 0])   # right column wraps
    assert c[0, 0].sum() == 0                               # vertical stays zero
    rl = tc.pad2d(x, (2, 1, 1, 0), mode=tc.nn.PAD_CIRC_H_REPL_V).data
    assert np.array_equal(rl[0, 0], rl[0, 2])               # top rows replicate
    assert np.array_equal(rl[0, -1], rl[0, -2])


def test_pad2d_gradcheck_all_modes():
    r = rng(26)
    for mode in (tc.nn.PAD_ZERO, tc.nn.PAD_CIRC_H, tc.nn.PAD_CIRC_H_REPL_V):
        x = t64(r.normal(size=(2, 4, 5)))
        rep = tc.gradcheck(lambda x: (tc.pad2d(x, (1, 2, 2, 1), mode=mode) ** 2).mean(), [x])
        assert rep.max_err < 1e-6, mode


def test_pixel_shuffle_unshuffle_inverse():
    r = rng(27)
    x = r.normal(size=(8, 2, 4))
    y = tc.pixel_shuffle(tc.Tensor(x), 2)
    assert y.data.shape == (2, 4, 8)
    assert np.array_equal(tc.pixel_unshuffle(y, 2).data, x)


def test_pixel_shuffle_gradcheck():
    r = rng(28)
    x = t64(r.normal(size=(8, 2, 4)))
    rep = tc.gradcheck(lambda x: (tc.pixel_shuffle(x, 2) ** 2).mean(), [x])
    assert rep.max_err < 1e-6


def test_nearest_upsample_values_and_grad():
    x = t64(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
    y = tc.nearest_upsample(x, 2)
    assert np.array_equal(y.data[0], [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])
    tc.backward(y.sum())
    assert np.array_equal(x.grad, np.full((1, 2, 2), 4.0))


def test_grid_sample_forward_matches_plain_kernel():
    r = rng(29)
    img = r.uniform(size=(3, 8, 16)).astype(np.float32)
    coords = np.stack([r.uniform(0, 16, size=(4, 4)), r.uniform(0, 7, size=(4, 4))]).astype(np.float32)
    a = tc.grid_sample(tc.Tensor(img), tc.Tensor(coords)).data
    b = bilinear_sample(img, coords, wrap="circular")
    assert np.array_equal(a, b)


def test_global_avg_pool():
    r = rng(30)
    x = r.normal(size=(5, 4, 6))
    out = tc.global_avg_pool(tc.Tensor(x)).data
    assert out.shape == (5, 1, 1)
    np.testing.assert_allclose(out[:, 0, 0], x.mean(axis=(1, 2)), rtol=1e-12)


def test_softmax_uniform_rows_and_sigmoid_zero():
    s = E.softmax(tc.Tensor(np.zeros((3, 5))), axis=-1).data
    np.testing.assert_allclose(s, 0.2, rtol=0, atol=1e-15)
    assert E.sigmoid(tc.Tensor(np.zeros(4))).data.tolist() == [0.5] * 4


def test_layer_norm_standardizes():
    r = rng(31)
    x = tc.Tensor(r.normal(3.0, 2.0, size=(4, 16)))
    y = tc.layer_norm(x, axis=-1, eps=0.0).data
    np.testing.assert_allclose(y.mean(axis=-1), 0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=-1), 1, rtol=1e-10)


def test_batch_norm_train_vs_eval():
    r = rng(32)
    bn = tc.BatchNorm2d(3, momentum=0.1, dtype=np.float64)
    x = r.normal(2.0, 3.0, size=(3, 8, 8))
    y = bn(tc.Tensor(x)).data
    np.testing.assert_allclose(y.mean(axis=(1, 2)), 0, atol=1e-12)
    mu = x.mean(axis=(1, 2))
    np.testing.assert_allclose(bn.running_mean[:, 0, 0], 0.1 * mu, rtol=1e-12)
    bn.eval()
    y2 = bn(tc.Tensor(x)).data
    expect = (x - bn.running_mean) / np.sqrt(bn.running_var + bn.eps)
    np.testing.assert_allclose(y2, expect, rtol=1e-12)


def test_attention_rows_sum_to_one():
    r = rng(33)
    mha = tc.MultiHeadAttention(12, 3, r, dtype=np.float64)
    mha(tc.Tensor(r.normal(size=(6, 12))))
    assert mha.last_attn.shape == (3, 6, 6)
    np.testing.assert_allclose(mha.last_attn.sum(axis=-1), 1.0, rtol=1e-12)


def test_sum_gradient_is_ones():
    x = t64(np.ones((3, 4)))
    tc.backward(x.sum())
    assert np.array_equal(x.grad, np.ones((3, 4)))


def test_smooth_l1_value_beta_over_8():
    # |d| = beta/2 sits in the quadratic zone: 0.5 (beta/2)^2 / beta = beta/8
    for beta in (1.0, 2.0):
        a = tc.Tensor(np.array([beta / 2]))
        v = tc.smooth_l1(a, tc.Tensor(np.zeros(1)), beta=beta).item()
        assert v == pytest.approx(beta / 8, rel=1e-12)


def test_smooth_l1_grad_clamps():
    a = t64(np.array([0.5, 2.0, -3.0]))
    tc.backward(tc.smooth_l1(a, tc.Tensor(np.zeros(3)), beta=1.0))
    np.testing.assert_allclose(a.grad, [0.5 / 3, 1 / 3, -1 / 3], rtol=1e-12)


def test_l2_mse_grad_closed_form():
    r = rng(34)
    a = t64(r.normal(size=(4, 5)))
    b = t64(r.normal(size=(4, 5)))
    tc.backward(tc.l2_mse(a, b))
    np.testing.assert_allclose(a.grad, 2 * (a.data - b.data) / 20, rtol=1e-12)
    np.testing.assert_allclose(b.grad, -a.grad, rtol=1e-12)


def test_l1_value_and_grad():
    a = t64(np.array([1.0, -2.0]))
    loss = tc.l1(a, tc.Tensor(np.zeros(2)))
    assert loss.item() == pytest.approx(1.5)
    tc.backward(loss)
    assert np.array_equal(a.grad, [0.5, -0.5])


# ---------------------------------------------------------------------------
# optimizer, graph mechanics, modules

def test_adam_first_step_magnitude():
    # m-hat / (sqrt(v-hat) + eps) == g/|g| on step one, so the move is lr
    p = t64(np.array([1.0, -4.0]))
    tc.backward((p * p).sum())
    opt = tc.Adam([p], lr=0.1)
    opt.step()
    np.testing.assert_allclose(p.data, [0.9, -3.9], atol=1e-6)


def test_adam_skips_gradless_params():
    p = t64(np.array([2.0]))
    q = t64(np.array([5.0]))
    tc.backward((p * p).sum())
    tc.Adam([p, q], lr=0.5).step()
    assert q.data[0] == 5.0 and p.data[0] != 2.0


def test_backward_without_graph_raises():
    with tc.no_grad():
        y = t64(np.ones(3)) * 2.0
    with pytest.raises(ValueError):
        tc.backward(y.sum())


def test_no_grad_blocks_recording():
    x = t64(np.ones(3))
    assert tc.is_grad_enabled()
    with tc.no_grad():
        assert not tc.is_grad_enabled()
        y = x * 3.0
    assert y.parents == () and y.bwd is None


def test_grad_accumulates_across_backwards():
    x = t64(np.array([2.0]))
    tc.backward((x * x).sum())
    tc.backward((x * x).sum())
    assert np.array_equal(x.grad, [8.0])
    x.zero_grad()
    assert x.grad is None


def test_gradients_are_deterministic():
    def run():
        r = rng(35)
        conv = tc.Conv2d(3, 4, 3, r, dtype=np.float64)
        x = t64(r.normal(size=(3, 6, 8)))
        tc.backward(tc.l1(conv(x), tc.Tensor(np.zeros((4, 6, 8)))))
        return x.grad.copy(), conv.weight.grad.copy()
    g1, g2 = run(), run()
    assert np.array_equal(g1[0], g2[0]) and np.array_equal(g1[1], g2[1])


def test_named_parameters_nested():
    r = rng(36)

    class Block(tc.Module):
        def __init__(self):
            self.lin = tc.Linear(4, 4, r)
            self.scale = tc.Parameter(np.ones(1))

    class Net(tc.Module):
        def __init__(self):
            self.blocks = [Block(), Block()]
            self.head = tc.Linear(4, 2, r)

    net = Net()
    names = [n for n, _ in net.named_parameters()]
    assert "blocks.0.lin.weight" in names and "blocks.1.scale" in names
    assert len(names) == 2 * 3 + 2
    net.eval()
    assert all(not m.training for m in net.modules())


def test_conv_rejects_bad_shapes():
    r = rng(37)
    with pytest.raises(ValueError):
        tc.Conv2d(5, 4, 3, r, groups=2)
    x = tc.Tensor(np.zeros((3, 4, 4)))
    w = tc.Tensor(np.zeros((2, 2, 3, 3)))
    with pytest.raises(ValueError):
        tc.conv2d(x, w)


# ---------------------------------------------------------------------------
# checkpoints

def test_checkpoint_round_trip_with_optimizer(tmp_path):
    r = rng(38)
    lin = tc.Linear(4, 3, r, dtype=np.float32)
    params = dict(lin.named_parameters())
    x = tc.Tensor(r.normal(size=(2, 4)).astype(np.float32))
    tc.backward(tc.l2_mse(lin(x), tc.Tensor(np.zeros((2, 3), np.float32))))
    opt = tc.Adam(list(params.values()), lr=1e-3)
    opt.step()

    path = tmp_path / "ck.bin"
    tc.save_checkpoint(path, params, {"dim": 4, "lr": 1e-3}, step=7, optimizer=opt)
    ck = tc.load_checkpoint(path)
    assert ck.step == 7 and ck.config == {"dim": 4, "lr": 1e-3}
    assert ck.optimizer["t"] == 1

    lin2 = tc.Linear(4, 3, rng(39), dtype=np.float32)
    restore_parameters(dict(lin2.named_parameters()), ck)
    assert np.array_equal(lin2.weight.data, lin.weight.data)
    opt2 = tc.Adam(lin2.parameters(), lr=1e-3)
    opt2.load_state_dict(ck.optimizer)
    assert opt2.t == 1 and np.array_equal(opt2.m[0], opt.m[0])


def test_checkpoint_detects_corruption(tmp_path):
    r = rng(40)
    lin = tc.Linear(3, 2, r)
    path = tmp_path / "ck.bin"
    tc.save_checkpoint(path, dict(lin.named_parameters()), {"d": 3})
    raw = bytearray(path.read_bytes())
    raw[20] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(DataError):
        tc.load_checkpoint(path)


def test_checkpoint_rejects_shape_mismatch(tmp_path):
    r = rng(41)
    lin = tc.Linear(3, 2, r)
    path = tmp_path / "ck.bin"
    tc.save_checkpoint(path, dict(lin.named_parameters()), {})
    other = tc.Linear(4, 2, r)
    with pytest.raises(DataError):
        restore_parameters(dict(other.named_parameters()), tc.load_checkpoint(path))
