import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmpnet import gradcases, ops
from dmpnet import network as net
from dmpnet.dmp import DmpConfig
from dmpnet.gradcheck import check_gradients
from dmpnet.optim import Adam
from dmpnet.tensor import Tensor
from dmpnet.train import train_step

from oracles import conv2d_direct, maxpool_direct, resize_direct


def small_cfg(size=32, **kw):
    return net.NetworkConfig(input_size=size, encoder_widths=(4, 4, 8, 8, 8, 8), fcc_channels=8,
                             dmp=DmpConfig(channels=8, groups=4), **kw)


def rand_batch(rng, n, size):
    rgb = rng.uniform(0, 1, (n, 3, size, size)).astype(np.float32)
    depth = np.repeat(rng.uniform(0, 1, (n, 1, size, size)), 3, axis=1).astype(np.float32)
    gt = (rng.random((n, 1, size, size)) > 0.7).astype(np.float32)
    return rgb, depth, gt


# --------------------------------------------------------------------- config & params


def test_level_scales_and_fused_levels():
    cfg = net.NetworkConfig()
    assert net.LEVEL_SCALES == (1, 2, 4, 8, 16, 16)
    assert cfg.fused_levels == (1, 2, 3, 6)
    assert [cfg.level_size(l) for l in range(1, 7)] == [64, 32, 16, 8, 4, 4]


@pytest.mark.parametrize("kw", [dict(input_size=60), dict(encoder_widths=(1, 2)), dict(fcc_channels=10),
                                dict(modality="thermal"), dict(dmp_levels=(7,))])
def test_config_rejects(kw):
    with pytest.raises(ValueError):
        net.NetworkConfig(**kw)


def test_param_names_are_stable():
    names = set(net.init_params(net.NetworkConfig()).names())
    for name in ["encoder.l3.conv1.weight", "encoder.l6.conv2.bias", "dmp.l4.affinity.l5.weight",
                 "dmp.l5.walk.rgb.weight", "dmp.l4.alpha", "dmp.l4.proj.l3.weight", "fcc.rgb.l1.weight",
                 "fcc.depth.l6.weight", "fcc.dmp.l5.weight", "ff.l1.b5.weight", "ff.l6.pool.weight",
                 "head.rgb.weight", "head.depth.weight", "head.fused.weight"]:
        assert name in names, name
    assert not any(n.startswith("fcc.rgb.l4") for n in names)


def test_init_is_seeded():
    a = net.init_params(small_cfg(), 3)
    b = net.init_params(small_cfg(), 3)
    c = net.init_params(small_cfg(), 4)
    assert all(a[n].data.tobytes() == b[n].data.tobytes() for n in a.names())
    assert any(a[n].data.tobytes() != c[n].data.tobytes() for n in a.names())
    assert all(not a[n].data.any() for n in a.names() if n.endswith(".bias"))
    assert all(not a[n].data.any() for n in a.names() if ".walk." in n or n.endswith(".alpha"))


# --------------------------------------------------------------------- encoder


@pytest.mark.parametrize("size", [32, 64, 320])
def test_side_output_scales(size):
    cfg = net.NetworkConfig(input_size=size, encoder_widths=(2, 2, 2, 2, 2, 3))
    params = net.init_params(cfg, 0)
    sides = net.encoder_forward(Tensor(np.zeros((1, 3, size, size))), params, cfg)
    assert [s.shape[2] for s in sides] == [size // f for f in (1, 2, 4, 8, 16, 16)]
    assert [s.shape[3] for s in sides] == [size // f for f in (1, 2, 4, 8, 16, 16)]
    assert [s.shape[1] for s in sides] == [2, 2, 2, 2, 2, 3]


def test_zero_input_zero_bias_gives_zero_sides():
    cfg = small_cfg()
    sides = net.encoder_forward(Tensor(np.zeros((1, 3, 32, 32))), net.init_params(cfg, 0), cfg)
    assert all(not s.data.any() for s in sides)


def test_encoder_rejects_wrong_size():
    cfg = small_cfg()
    with pytest.raises(ValueError, match="input_size"):
        net.encoder_forward(Tensor(np.zeros((1, 3, 64, 64))), net.init_params(cfg, 0), cfg)
    with pytest.raises(ValueError, match="3, h, w"):
        net.encoder_forward(Tensor(np.zeros((1, 1, 32, 32))), net.init_params(cfg, 0), cfg)


def test_siamese_streams_share_weights():
    cfg = small_cfg()
    params = net.init_params(cfg, 1)
    img = Tensor(np.random.default_rng(0).uniform(0, 1, (1, 3, 32, 32)))
    out = net.forward(img, img, params, cfg)
    for a, b in zip(out["encoder_rgb"], out["encoder_depth"]):
        assert a.data.tobytes() == b.data.tobytes()
    params["encoder.l2.conv1.weight"].data[0, 0, 1, 1] += 0.5
    out2 = net.forward(img, img, params, cfg)
    for a, b, c in zip(out2["encoder_rgb"], out2["encoder_depth"], out["encoder_rgb"]):
        assert a.data.tobytes() == b.data.tobytes()
    assert out2["encoder_rgb"][2].data.tobytes() != out["encoder_rgb"][2].data.tobytes()


# --------------------------------------------------------------------- FCC and fusion


def test_fcc_identity_kernel_is_relu():
    x = Tensor(np.random.default_rng(1).standard_normal((1, 4, 5, 5)))
    eye = Tensor(np.eye(4).reshape(4, 4, 1, 1))
    from dmpnet.dmp import Conv

    (out,) = net.fcc_forward([x], [Conv(eye, Tensor(np.zeros(4)))])
    np.testing.assert_array_equal(out.data, np.maximum(x.data, 0))


def test_fcc_matches_conv_oracle():
    from dmpnet.dmp import Conv

    rng = np.random.default_rng(2)
    x, w, b = rng.standard_normal((1, 6, 4, 4)), rng.standard_normal((8, 6, 1, 1)), rng.standard_normal(8)
    (out,) = net.fcc_forward([Tensor(x, dtype=np.float64)], [Conv(Tensor(w, dtype=np.float64), Tensor(b, dtype=np.float64))])
    assert out.shape == (1, 8, 4, 4)
    np.testing.assert_allclose(out.data, np.maximum(conv2d_direct(x, w, b), 0), atol=1e-12)


def test_fuse_identities():
    rng = np.random.default_rng(3)
    x = Tensor(rng.standard_normal((1, 2, 3, 3)))
    np.testing.assert_array_equal(net.cross_modal_fuse(Tensor(np.zeros(x.shape)), x).data, x.data)
    ones = Tensor(np.ones((1, 2, 3, 3)))
    np.testing.assert_array_equal(net.cross_modal_fuse(ones, ones).data, 3.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_fuse_symmetric_and_elementwise(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, 1, 2, 3, 3))
    ab = net.cross_modal_fuse(Tensor(a, dtype=np.float64), Tensor(b, dtype=np.float64)).data
    ba = net.cross_modal_fuse(Tensor(b, dtype=np.float64), Tensor(a, dtype=np.float64)).data
    np.testing.assert_array_equal(ab, ba)
    for idx in np.ndindex(a.shape):
        assert ab[idx] == pytest.approx(a[idx] + b[idx] + a[idx] * b[idx], abs=1e-12)


def test_fuse_shape_mismatch():
    with pytest.raises(ValueError):
        net.cross_modal_fuse(Tensor(np.ones((1, 2, 3, 3))), Tensor(np.ones((1, 3, 3, 3))))


# --------------------------------------------------------------------- FF and decoder


def _ff_params(rng, k, zero=False):
    t = {}
    q = k // 4
    for name, ksz in (("b1", 1), ("b3", 3), ("b5", 5), ("pool", 1)):
        w = np.zeros((q, k, ksz, ksz)) if zero else rng.standard_normal((q, k, ksz, ksz)) * 0.3
        t[f"ff.l1.{name}.weight"] = Tensor(w, dtype=np.float64)
        t[f"ff.l1.{name}.bias"] = Tensor(np.zeros(q) if zero else rng.standard_normal(q), dtype=np.float64)
    return net.NetworkParams(t)


def test_ff_shape_and_zero_kernels():
    rng = np.random.default_rng(4)
    x = Tensor(rng.standard_normal((2, 8, 5, 6)), dtype=np.float64)
    assert net.ff_forward(x, _ff_params(rng, 8), "ff.l1").shape == (2, 8, 5, 6)
    assert not net.ff_forward(x, _ff_params(rng, 8, zero=True), "ff.l1").data.any()


def test_ff_branch_oracle():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((1, 8, 5, 5))
    p = _ff_params(rng, 8)
    w = lambda n: p[f"ff.l1.{n}.weight"].data
    b = lambda n: p[f"ff.l1.{n}.bias"].data
    relu = lambda a: np.maximum(a, 0)
    pooled = maxpool_direct(x, 3, 1, pad=1)
    expected = np.concatenate([
        relu(conv2d_direct(x, w("b1"), b("b1"))),
        relu(conv2d_direct(x, w("b3"), b("b3"), pad=1)),
        relu(conv2d_direct(x, w("b5"), b("b5"), pad=2)),
        relu(conv2d_direct(pooled, w("pool"), b("pool"))),
    ], axis=1)
    np.testing.assert_allclose(net.ff_forward(Tensor(x, dtype=np.float64), p, "ff.l1").data, expected, atol=1e-10)


def test_ff_requires_k_divisible_by_4():
    with pytest.raises(ValueError, match="divisible by 4"):
        net.ff_forward(Tensor(np.ones((1, 6, 3, 3))), net.NetworkParams({}), "ff.l1")


def _decoder_setup(seed, k=4, sizes=(16, 8, 4, 2, 1, 1)):
    rng = np.random.default_rng(seed)
    cfg = net.NetworkConfig(input_size=16, fcc_channels=k)
    params = net.init_params(cfg, seed, dtype=np.float64)
    inputs = [Tensor(rng.standard_normal((1, k, s, s)), dtype=np.float64) for s in sizes]
    return params, inputs


def test_decoder_single_level_is_ff():
    params, inputs = _decoder_setup(0)
    (out,) = net.decoder_forward(inputs[:1], params)
    np.testing.assert_array_equal(out.data, net.ff_forward(inputs[0], params, "ff.l1").data)


def test_decoder_matches_dense_summation_literal():
    params, inputs = _decoder_setup(1)
    outs = net.decoder_forward(inputs, params)
    assert len(outs) == 6
    assert [o.shape[2] for o in outs] == [1, 1, 2, 4, 8, 16]  # coarsest first, finest last
    ff_out = {}
    for lvl in range(6, 0, -1):
        x = inputs[lvl - 1].data.copy()
        s = x.shape[2]
        for coarser in range(lvl + 1, 7):
            src = ff_out[coarser][0]
            x += np.stack([resize_direct(ch, s, s) for ch in src])[None]
        ff_out[lvl] = net.ff_forward(Tensor(x, dtype=np.float64), params, f"ff.l{lvl}").data
    for lvl in range(1, 7):
        np.testing.assert_allclose(outs[6 - lvl].data, ff_out[lvl], atol=1e-10)


def test_decoder_finest_level_sums_five_coarser_outputs():
    params, inputs = _decoder_setup(2)
    calls = []
    orig = ops.resize_bilinear

    def counting(x, h, w):
        calls.append((x.shape[2], h))
        return orig(x, h, w)

    ops.resize_bilinear = counting
    try:
        net.decoder_forward(inputs, params)
    finally:
        ops.resize_bilinear = orig
    assert sum(1 for _, target in calls if target == 16) == 5
    assert len(calls) == 15  # 0 + 1 + 2 + 3 + 4 + 5 dense links


# --------------------------------------------------------------------- heads and forward


def test_predict_shapes_and_range():
    cfg = net.NetworkConfig()
    params = net.init_params(cfg, 0)
    rgb, depth, _ = rand_batch(np.random.default_rng(6), 2, 64)
    out = net.forward(Tensor(rgb), Tensor(depth), params, cfg)
    assert out["s_f"].shape == (2, 1, 64, 64)
    assert out["s_r"].shape == (2, 1, 4, 4) and out["s_d"].shape == (2, 1, 4, 4)
    for key in ("s_f", "s_r", "s_d"):
        assert np.all((out[key].data > 0) & (out[key].data < 1))
    assert len(out["sides"]) == 6


def test_zero_heads_give_half():
    cfg = small_cfg()
    params = net.init_params(cfg, 0)
    for name in ("head.rgb.weight", "head.depth.weight", "head.fused.weight"):
        params[name].data[:] = 0
    rgb, depth, _ = rand_batch(np.random.default_rng(7), 1, 32)
    out = net.forward(Tensor(rgb), Tensor(depth), params, cfg)
    for key in ("s_f", "s_r", "s_d"):
        assert np.all(out[key].data == 0.5)


def test_rgb_only_modality_ignores_depth():
    cfg = small_cfg(modality="rgb")
    params = net.init_params(cfg, 0)
    rng = np.random.default_rng(8)
    rgb, depth, _ = rand_batch(rng, 1, 32)
    a = net.forward(Tensor(rgb), Tensor(depth), params, cfg)["s_f"].data
    b = net.forward(Tensor(rgb), Tensor(1 - depth), params, cfg)["s_f"].data
    assert a.tobytes() == b.tobytes()


# --------------------------------------------------------------------- losses


def test_bce_perfect_prediction_near_zero():
    g = (np.random.default_rng(9).random((1, 1, 4, 4)) > 0.5).astype(np.float64)
    loss = net.loss_bce(Tensor(g, dtype=np.float64), g).item()
    assert loss == pytest.approx(16 * -math.log(1 - 1e-7), rel=1e-6)
    assert loss < 1e-5


def test_bce_one_pixel_half():
    assert net.loss_bce(Tensor(np.full((1, 1, 1, 1), 0.5)), np.ones((1, 1, 1, 1))).item() == pytest.approx(0.693147, abs=1e-6)


def test_bce_scalar_loop_oracle():
    rng = np.random.default_rng(10)
    s = rng.uniform(0.01, 0.99, (2, 1, 3, 3))
    g = rng.uniform(0, 1, (2, 1, 3, 3))
    expected = -sum(gi * math.log(si) + (1 - gi) * math.log(1 - si) for si, gi in zip(s.ravel(), g.ravel()))
    assert net.loss_bce(Tensor(s, dtype=np.float64), g).item() == pytest.approx(expected, rel=1e-12)


def test_auto_lambda_values():
    assert net.auto_lambda(320, 20) == 256
    assert net.auto_lambda(64, 4) == 256
    assert net.auto_lambda(32, 2) == 256
    assert net.auto_lambda(48, 4) == 144


def test_downsample_gt_is_average_pool():
    g = np.zeros((1, 1, 4, 4))
    g[0, 0, :2, :2] = 1
    g[0, 0, 2, 2] = 1
    np.testing.assert_array_equal(net.downsample_gt(g, 2)[0, 0], [[1, 0], [0, 0.25]])


def _loss_inputs(seed, size=16, small=1):
    rng = np.random.default_rng(seed)
    s_f = Tensor(rng.uniform(0.05, 0.95, (1, 1, size, size)), dtype=np.float64)
    s_r = Tensor(rng.uniform(0.05, 0.95, (1, 1, small, small)), dtype=np.float64)
    s_d = Tensor(rng.uniform(0.05, 0.95, (1, 1, small, small)), dtype=np.float64)
    g = (rng.random((1, 1, size, size)) > 0.5).astype(np.float64)
    return s_f, s_r, s_d, g


def test_loss_total_lambda_zero_is_refined_loss():
    s_f, s_r, s_d, g = _loss_inputs(11)
    total, l_r, _ = net.loss_total(s_f, s_r, s_d, g, 0.0)
    assert total.item() == net.loss_bce(s_f, g).item()
    assert total.item() == l_r.item()


@pytest.mark.parametrize("lam", ["auto", 3.5])
def test_loss_total_formula(lam):
    s_f, s_r, s_d, g = _loss_inputs(12, size=16, small=4)
    total, _, _ = net.loss_total(s_f, s_r, s_d, g, lam)

    def bce(s, t):
        return -np.sum(t * np.log(s) + (1 - t) * np.log(1 - s))

    gs = g.reshape(1, 1, 4, 4, 4, 4).mean(axis=(3, 5))
    weight = 16.0 if lam == "auto" else lam
    expected = bce(s_f.data, g) + weight * (bce(s_r.data, gs) + bce(s_d.data, gs))
    assert total.item() == pytest.approx(expected, rel=1e-12)


# --------------------------------------------------------------------- training step


def test_train_step_lr_zero_leaves_params():
    cfg = small_cfg()
    params = net.init_params(cfg, 0)
    before = {n: params[n].data.copy() for n in params.names()}
    opt = Adam(params.values(), lr=0.0)
    total, l_r, l_g = train_step(rand_batch(np.random.default_rng(13), 2, 32), params, opt, cfg)
    assert np.isfinite(total) and np.isfinite(l_r) and np.isfinite(l_g)
    for n in params.names():
        assert params[n].data.tobytes() == before[n].tobytes(), n


def test_one_step_decreases_loss_in_most_trials():
    cfg = small_cfg(size=16)
    decreased = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        params = net.init_params(cfg, seed)
        batch = rand_batch(rng, 2, 16)
        opt = Adam(params.values())  # default learning rate and decay
        first, _, _ = train_step(batch, params, opt, cfg)
        from dmpnet.train import compute_loss

        second = compute_loss(params, cfg, *batch)[0].item()
        decreased.append(second < first)
    assert sum(decreased) >= 18, decreased


def test_non_finite_loss_is_reported():
    from dmpnet.train import NonFiniteLoss

    cfg = small_cfg(size=16)
    params = net.init_params(cfg, 0)
    params["head.fused.bias"].data[:] = np.nan
    with pytest.raises(NonFiniteLoss, match="non-finite"):
        train_step(rand_batch(np.random.default_rng(0), 1, 16), params, Adam(params.values()), cfg)


@pytest.mark.parametrize("seed", range(2))
def test_loss_gradient_on_one_percent_of_parameters(seed):
    cfg = gradcases.micro_config()
    params = net.init_params(cfg, seed, dtype=np.float64)
    rng = np.random.default_rng(100 + seed)
    gradcases.smooth_network_params(params, cfg, rng)
    rgb, depth, gt = rand_batch(rng, 1, 16)
    names = params.names()

    def fn(*values):
        local = net.NetworkParams(dict(zip(names, values)))
        out = net.forward(Tensor(rgb, dtype=np.float64), Tensor(depth, dtype=np.float64), local, cfg)
        return net.loss_total(out["s_f"], out["s_r"], out["s_d"], gt)[0]

    total = sum(params[n].size for n in names)
    counts = [math.ceil(0.01 * params[n].size) for n in names]
    results = check_gradients(fn, params.values(), seed=seed, names=names, sample=counts, skip_kinks=True)
    # elements straddling a relu/max-pool switch are skipped, the rest must agree
    assert sum(r.checked for r in results) >= 0.8 * sum(counts) >= 0.01 * total
    worst = max(results, key=lambda r: r.max_rel_error)
    assert worst.max_rel_error <= 1e-4, worst


@pytest.mark.parametrize("seed", range(4))
def test_end_to_end_input_gradient(seed):
    result = gradcases.run_case("end_to_end", gradcases.case_end_to_end, seed)
    assert result.max_rel_error <= 1e-4, result
    assert result.checked >= result.skipped
