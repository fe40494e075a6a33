import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from malimg.exceptions import CheckpointError, GraphError, InvalidTarget, NonFiniteError, ShapeError
from malimg.nn import (
    BackboneConfig,
    FpnConfig,
    MalwareNet,
    NetConfig,
    Tensor,
    add,
    checkpoint,
    class_weights,
    classify_head,
    concat,
    conv2d,
    cross_entropy,
    forward_backbone,
    fpn_fuse,
    global_avg_pool,
    linear,
    mul,
    relu,
    upsample_nearest2x,
)
from malimg.nn.layers import FPN, ClassifierHead
from gradcheck import network_error, op_error, randomize_biases
from oracles import numeric_grad, rel_error

GRAD_TOL = 1e-4
H = 1e-4


def _leaf(rng, shape, avoid_zero=False):
    data = rng.standard_normal(shape)
    if avoid_zero:
        data = np.where(np.abs(data) < 0.05, 0.5, data)
    return Tensor(data, requires_grad=True)


def _check_grads(build, leaves, rng):
    assert op_error(build, leaves, rng, H) < GRAD_TOL


# -- autodiff core --------------------------------------------------------------

def test_square_grad():
    w = Tensor(3.0, requires_grad=True)
    (w * w).backward()
    assert w.grad == 6.0


def test_backward_requires_scalar(rng):
    x = _leaf(rng, (2, 2))
    with pytest.raises(GraphError):
        (x * x).backward()


def test_backward_twice_rejected():
    w = Tensor(2.0, requires_grad=True)
    loss = w * w
    loss.backward()
    with pytest.raises(GraphError):
        loss.backward()


def test_grad_accumulates_through_shared_node():
    w = Tensor(2.0, requires_grad=True)
    a = w * w
    (a + a).backward()
    assert w.grad == 8.0


def test_nonfinite_values_rejected():
    with pytest.raises(NonFiniteError):
        add(Tensor(np.array([np.inf])), Tensor(np.array([1.0])))


# -- per-op gradient checks (double precision, h = 1e-4) -----------------------

def test_grad_add_broadcast(rng):
    a, b = _leaf(rng, (2, 3, 4)), _leaf(rng, (3, 1))
    _check_grads(lambda: add(a, b), [a, b], rng)


def test_grad_mul(rng):
    a, b = _leaf(rng, (3, 4)), _leaf(rng, (4,))
    _check_grads(lambda: mul(a, b), [a, b], rng)


def test_grad_relu(rng):
    x = _leaf(rng, (2, 3, 5), avoid_zero=True)
    _check_grads(lambda: relu(x), [x], rng)


def test_grad_linear(rng):
    x, w, b = _leaf(rng, (4, 5)), _leaf(rng, (3, 5)), _leaf(rng, (3,))
    _check_grads(lambda: linear(x, w, b), [x, w, b], rng)


@pytest.mark.parametrize("stride,padding,k", [(1, 0, 3), (1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 0, 2)])
def test_grad_conv2d(rng, stride, padding, k):
    x = _leaf(rng, (2, 3, 6, 6))
    w = _leaf(rng, (4, 3, k, k))
    b = _leaf(rng, (4,))
    _check_grads(lambda: conv2d(x, w, b, stride, padding), [x, w, b], rng)


def test_grad_global_avg_pool(rng):
    x = _leaf(rng, (2, 3, 4, 5))
    _check_grads(lambda: global_avg_pool(x), [x], rng)


def test_grad_upsample(rng):
    x = _leaf(rng, (2, 3, 3, 2))
    _check_grads(lambda: upsample_nearest2x(x), [x], rng)


def test_grad_concat(rng):
    a, b = _leaf(rng, (2, 3)), _leaf(rng, (2, 5))
    _check_grads(lambda: concat([a, b], axis=1), [a, b], rng)


@pytest.mark.parametrize("weighted", [False, True])
def test_grad_cross_entropy_soft_targets(rng, weighted):
    z = _leaf(rng, (4, 5))
    y = rng.random((4, 5))
    y /= y.sum(axis=1, keepdims=True)
    w = rng.uniform(0.5, 2.0, 5) if weighted else None
    loss = cross_entropy(z, y, w)
    loss.backward()
    num = numeric_grad(lambda: float(cross_entropy(Tensor(z.data), y, w).data), z.data, H)
    assert rel_error(z.grad, num) < GRAD_TOL


# -- conv reference values -----------------------------------------------------

def test_conv2d_matches_direct_loops(rng):
    x = rng.standard_normal((2, 3, 7, 7))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ho = (7 + 2 - 3) // 2 + 1
    ref = np.zeros((2, 4, ho, ho))
    for n in range(2):
        for o in range(4):
            for i in range(ho):
                for j in range(ho):
                    ref[n, o, i, j] = (xp[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[o]).sum() + b[o]
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_upsample_single_pixel():
    out = upsample_nearest2x(Tensor(np.array([[[[2.5]]]]))).data
    assert out.shape == (1, 1, 2, 2) and np.all(out == 2.5)


# -- backbone / FPN / head --------------------------------------------------------

def _net(widths=(8, 16, 32, 64), in_ch=3, fpn_width=None, classes=43, dtype=np.float64, seed=0):
    cfg = NetConfig(BackboneConfig(in_channels=in_ch, widths=widths),
                    None if fpn_width is None else FpnConfig(width=fpn_width), classes)
    return MalwareNet(cfg, seed=seed, dtype=dtype)


def test_backbone_shapes_256():
    net = _net(dtype=np.float32)
    feats = forward_backbone(np.zeros((2, 3, 256, 256), np.float32), net.backbone)
    assert feats["C2"].shape == (2, 8, 64, 64)
    assert feats["C3"].shape == (2, 16, 32, 32)
    assert feats["C4"].shape == (2, 32, 16, 16)
    assert feats["C5"].shape == (2, 64, 8, 8)


def test_backbone_c5_spatial_64():
    net = _net(in_ch=1)
    assert forward_backbone(np.zeros((1, 1, 64, 64)), net.backbone)["C5"].shape[2:] == (2, 2)


def test_backbone_zero_input_zero_bias():
    net = _net(in_ch=1)
    feats = forward_backbone(np.zeros((1, 1, 64, 64)), net.backbone)
    assert all(not f.data.any() for f in feats.values())


def test_backbone_rejects_indivisible():
    with pytest.raises(ShapeError):
        forward_backbone(np.zeros((1, 3, 48, 64)), _net().backbone)


@given(st.sampled_from([1, 3]), st.lists(st.integers(1, 6), min_size=4, max_size=4),
       st.integers(1, 5), st.sampled_from([32, 64]), st.integers(1, 2))
def test_shape_contract(in_ch, widths, d, side, batch):
    net = _net(tuple(widths), in_ch, fpn_width=d, classes=7)
    x = np.random.default_rng(0).random((batch, in_ch, side, side))
    feats = forward_backbone(x, net.backbone)
    pyr = fpn_fuse(feats, net.fpn)
    for i, (c, p) in enumerate(zip(("C2", "C3", "C4", "C5"), ("P2", "P3", "P4", "P5")), start=2):
        assert feats[c].shape == (batch, widths[i - 2], side // 2 ** i, side // 2 ** i)
        assert pyr[p].shape == (batch, d, side // 2 ** i, side // 2 ** i)
    assert net(x).shape == (batch, 7)


def _identity_fpn(width, gain=1.0):
    fpn = FPN([width] * 4, FpnConfig(width=width), rng=np.random.default_rng(0), dtype=np.float64)
    for lat in fpn.lateral:
        lat.weight.data = gain * np.eye(width).reshape(width, width, 1, 1)
        lat.bias.data = np.zeros(width)
    return fpn


def _feats(values, width=2, side=16, batch=1):
    return {name: Tensor(np.full((batch, width, side >> i, side >> i), v))
            for i, (name, v) in enumerate(zip(("C2", "C3", "C4", "C5"), values))}


def test_fpn_identity_laterals_zero_top():
    rng = np.random.default_rng(5)
    feats = {name: Tensor(rng.standard_normal((1, 2, 16 >> i, 16 >> i)))
             for i, name in enumerate(("C2", "C3", "C4", "C5"))}
    feats["C5"] = Tensor(np.zeros((1, 2, 2, 2)))
    out = fpn_fuse(feats, _identity_fpn(2))
    assert not out["P5"].data.any()
    np.testing.assert_array_equal(out["P4"].data, feats["C4"].data)


def test_fpn_constant_recurrence():
    c = (0.3, -1.25, 2.0, 0.7)
    gain = 1.5
    out = fpn_fuse(_feats(c), _identity_fpn(2, gain))
    # hand recurrence: p5 = g*c5, p_i = g*c_i + p_{i+1}
    p5 = gain * c[3]
    p4 = gain * c[2] + p5
    p3 = gain * c[1] + p4
    p2 = gain * c[0] + p3
    for name, expect in zip(("P2", "P3", "P4", "P5"), (p2, p3, p4, p5)):
        assert np.all(out[name].data == expect)


def test_fpn_rejects_broken_chain():
    feats = _feats((1, 1, 1, 1))
    feats["C4"] = Tensor(np.zeros((1, 2, 3, 3)))
    with pytest.raises(ShapeError):
        fpn_fuse(feats, _identity_fpn(2))


def test_head_zero_features():
    head = ClassifierHead(8, 43, rng=np.random.default_rng(0), dtype=np.float64)
    pyr = {p: Tensor(np.zeros((3, 2, 4, 4))) for p in ("P2", "P3", "P4", "P5")}
    logits = classify_head(pyr, head)
    assert logits.shape == (3, 43) and not logits.data.any()


def test_head_hand_computed():
    head = ClassifierHead(8, 2, rng=np.random.default_rng(0), dtype=np.float64)
    head.fc.weight.data = np.arange(16, dtype=float).reshape(2, 8) / 10.0
    head.fc.bias.data = np.array([0.5, -0.5])
    pooled = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]
    pyr = {p: Tensor(np.full((1, 2, 2 ** (3 - i), 2 ** (3 - i)), 0.0)) for i, p in enumerate(("P2", "P3", "P4", "P5"))}
    for i, p in enumerate(("P2", "P3", "P4", "P5")):
        pyr[p].data[0, 0] = pooled[2 * i]
        pyr[p].data[0, 1] = pooled[2 * i + 1]
    logits = classify_head(pyr, head).data[0]
    expect0 = sum(pv * k / 10.0 for k, pv in enumerate(pooled)) + 0.5
    expect1 = sum(pv * (8 + k) / 10.0 for k, pv in enumerate(pooled)) - 0.5
    assert logits[0] == pytest.approx(expect0, abs=1e-12)
    assert logits[1] == pytest.approx(expect1, abs=1e-12)


def test_head_without_fpn_uses_c5():
    net = _net(in_ch=1, classes=43)
    assert net(np.zeros((2, 1, 64, 64))).shape == (2, 43)


def test_full_network_gradient_check():
    net = _net(widths=(2, 3, 2, 3), in_ch=1, fpn_width=2, classes=3, seed=1)
    rng = np.random.default_rng(2)
    randomize_biases(net, rng)
    x = rng.random((2, 1, 32, 32))
    worst, checked, total = network_error(net, x, np.eye(3)[[0, 2]], H)
    assert worst < GRAD_TOL
    assert checked >= 0.9 * total


# -- losses -------------------------------------------------------------------

def test_uniform_softmax_loss_is_ln2():
    loss = cross_entropy(Tensor(np.zeros((1, 2))), np.array([[1.0, 0.0]]))
    assert abs(loss.item() - math.log(2)) < 1e-12


def test_class_weights_example():
    w = class_weights([60, 20, 10])
    assert w.tolist() == [0.5, 1.5, 3.0]


def test_uniform_counts_bitwise_equal(rng):
    w = class_weights([7, 7, 7, 7])
    assert w.tolist() == [1.0] * 4
    z = rng.standard_normal((6, 4))
    y = np.eye(4)[rng.integers(0, 4, 6)]
    a = cross_entropy(Tensor(z), y, w).data
    b = cross_entropy(Tensor(z), y).data
    assert a.tobytes() == b.tobytes()


def test_grad_at_uniform_softmax_is_p_minus_y():
    bsz, c = 3, 4
    z = Tensor(np.zeros((bsz, c)), requires_grad=True)
    y = np.eye(c)[[0, 1, 3]]
    cross_entropy(z, y).backward()
    np.testing.assert_array_equal(z.grad, (np.full((bsz, c), 1 / c) - y) / bsz)


def test_ce_stable_for_huge_logits():
    z = Tensor(np.array([[1e4, -1e4, 0.0], [-1e4, 1e4, 1e4]]))
    loss = cross_entropy(z, np.eye(3)[[1, 0]])
    assert np.isfinite(loss.item())


def test_invalid_target_rejected():
    with pytest.raises(InvalidTarget):
        cross_entropy(Tensor(np.zeros((1, 2))), np.array([[0.7, 0.7]]))


def test_forward_backward_deterministic():
    outs = []
    for _ in range(2):
        net = _net(widths=(2, 2, 2, 2), in_ch=1, fpn_width=2, classes=3, seed=9)
        x = np.random.default_rng(4).random((2, 1, 32, 32))
        loss = cross_entropy(net(x), np.eye(3)[[0, 1]])
        loss.backward()
        outs.append((loss.data.tobytes(), [p.grad.tobytes() for p in net.parameters().values()]))
    assert outs[0] == outs[1]


# -- checkpoint -----------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    net = _net(widths=(2, 2, 2, 2), in_ch=1, fpn_width=2, classes=3, dtype=np.float32)
    path = tmp_path / "m.mifw"
    checkpoint.save(path, net.state_arrays(), {"net": net.cfg.to_dict()})
    arrays, meta = checkpoint.load(path)
    assert NetConfig.from_dict(meta["net"]) == net.cfg
    for k, v in net.state_arrays().items():
        assert arrays[k].tobytes() == v.tobytes()
    assert path.read_bytes()[:4] == b"MIFW"


def test_checkpoint_layout_by_hand(tmp_path):
    blob = checkpoint.dumps({"w": np.array([[1.0, 2.0]], np.float32)}, {})
    assert blob[:4] == b"MIFW"
    assert int.from_bytes(blob[4:8], "little") == 1
    meta_len = int.from_bytes(blob[8:12], "little")
    pos = 12 + meta_len
    assert int.from_bytes(blob[pos:pos + 4], "little") == 1
    pos += 4
    assert int.from_bytes(blob[pos:pos + 2], "little") == 1 and blob[pos + 2:pos + 3] == b"w"
    pos += 3
    assert blob[pos] == 2
    assert np.frombuffer(blob[-8:], "<f4").tolist() == [1.0, 2.0]


def test_checkpoint_rejects_version(tmp_path):
    blob = bytearray(checkpoint.dumps({}, {}))
    blob[4:8] = (99).to_bytes(4, "little")
    with pytest.raises(CheckpointError):
        checkpoint.loads(bytes(blob))


def test_load_rejects_shape_mismatch():
    net = _net(widths=(2, 2, 2, 2), in_ch=1, fpn_width=2, classes=3, dtype=np.float32)
    other = _net(widths=(2, 2, 2, 4), in_ch=1, fpn_width=2, classes=3, dtype=np.float32)
    with pytest.raises(ShapeError):
        net.load_arrays(other.state_arrays())
