"""Acceptance suite: one test per criterion, each recording a pass/fail line.

Run alone with ``pytest tests/test_acceptance.py -v``; the summary block at
the end of the pytest output lists every criterion.
"""

import time

import numpy as np
import pytest

from dmpnet import config, dmp, dmpt, gradcases, metrics, synth
from dmpnet import network as net
from dmpnet.cli import cmd_gen_data, cmd_train
from dmpnet.netpbm import decode, encode, load_image, save_image, to_uint8
from dmpnet.tensor import Tape, Tensor, backward
from dmpnet.train import TrainConfig, evaluate_mae, train

from acceptance_report import record
from oracles import box_gather, brute_force_f, brute_force_mae, message_direct


def t64(a):
    return Tensor(np.asarray(a, dtype=np.float64), dtype=np.float64)


def test_criterion_01_gradient_suite():
    cases = {**gradcases.OP_CASES, **gradcases.DMP_CASES}
    start = time.monotonic()
    worst = {}
    for name, builder in cases.items():
        worst[name] = max(gradcases.run_case(name, builder, seed).max_rel_error for seed in range(10))
    elapsed = time.monotonic() - start
    top = max(worst, key=worst.get)
    ok = max(worst.values()) <= 1e-4 and elapsed < 120
    record(1, "gradient suite", ok,
           f"{len(cases)} cases x 10 seeds, worst {worst[top]:.2e} ({top}) <= 1e-4, {elapsed:.1f} s < 120 s")
    assert ok, worst


def test_criterion_02_message_oracle():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        groups = int(rng.choice([1, 2, 4]))
        c = groups * int(rng.integers(1, 8 // groups + 1))
        h, w = rng.integers(1, 6, size=2)
        levels = int(rng.integers(1, 4))
        n = int(rng.integers(1, 3))
        hs = [rng.standard_normal((n, 9, c, h, w)) for _ in range(levels)]
        As = [rng.standard_normal((n, 9 * groups, h, w)) for _ in range(levels)]
        Ws = [rng.standard_normal((n, 9, h, w)) for _ in range(levels)]
        betas = list(rng.uniform(0, 2, levels))
        got = dmp.message([t64(a) for a in hs], [t64(a) for a in As], [t64(a) for a in Ws], betas, groups).data
        worst = max(worst, float(np.abs(got - message_direct(hs, As, Ws, betas, groups)).max()))
    ok = worst <= 1e-5
    record(2, "message vs loop oracle", ok, f"100 instances, max abs diff {worst:.2e} <= 1e-5")
    assert ok


def test_criterion_03_box_gather_degeneracy():
    rng = np.random.default_rng(3)
    worst = 0.0
    for groups, c, h, w in [(1, 3, 5, 6), (2, 4, 4, 4), (4, 8, 3, 7), (2, 6, 1, 5)]:
        cfg = dmp.DmpConfig(channels=c, groups=groups, depth_levels=(4,))
        params = dmp.init_dmp_params(cfg, zero=True, dtype=np.float64)
        params.affinity[4].bias.data[:] = 1.0
        params.filter[4].bias.data[:] = 1.0
        rgb = rng.standard_normal((2, c, h, w))
        depth = rng.standard_normal((2, c, h, w))
        _, m = dmp.dmp_forward(t64(rgb), [t64(depth)], params, cfg, return_message=True)
        worst = max(worst, float(np.abs(m.data - box_gather(rgb)).max()))
    ok = worst <= 1e-6
    record(3, "box-gather degeneracy", ok, f"max abs diff {worst:.2e} <= 1e-6")
    assert ok


def test_criterion_04_identity_at_init():
    rng = np.random.default_rng(4)
    exact = True
    for seed in range(5):
        cfg = dmp.DmpConfig(channels=8, groups=4)
        params = dmp.init_dmp_params(cfg, zero=True)
        rgb = Tensor(np.abs(rng.standard_normal((2, 8, 6, 5))).astype(np.float32))
        depths = [Tensor(rng.standard_normal((2, 8, 6, 5)).astype(np.float32)) for _ in cfg.depth_levels]
        out = dmp.dmp_forward(rgb, depths, params, cfg)
        exact &= out.data.tobytes() == rgb.data.tobytes()
    record(4, "DMP identity at zero init", exact, "5 random non-negative inputs, bit-exact")
    assert exact


def test_criterion_05_metric_oracles():
    rng = np.random.default_rng(5)
    mismatches = 0
    in_range = True
    for _ in range(100):
        gt = (rng.random((8, 8)) < rng.uniform(0.1, 0.7)).astype(np.float64)
        if not gt.any():
            gt[rng.integers(8), rng.integers(8)] = 1
        pred = rng.random((8, 8))
        f, pr = metrics.f_measure_max(pred, gt)
        f_ref, precisions, recalls = brute_force_f(pred, gt)
        mismatches += f != f_ref or not np.array_equal(pr[:, 0], precisions) or not np.array_equal(pr[:, 1], recalls)
        mismatches += metrics.mae(pred, gt) != pytest.approx(brute_force_mae(pred, gt), abs=1e-15)
        s, e = metrics.s_measure(pred, gt), metrics.e_measure_max(pred, gt)
        in_range &= 0.0 <= s <= 1.0 and 0.0 <= e <= 1.0
    fixed = []
    for _ in range(20):
        gt = (rng.random((8, 8)) < 0.4).astype(np.float64)
        gt[0, 0], gt[7, 7] = 1, 0
        fixed += [metrics.s_measure(gt, gt), metrics.e_measure_max(gt, gt)]
    fixed_dev = float(np.abs(np.array(fixed) - 1.0).max())
    ok = mismatches == 0 and in_range and fixed_dev <= 1e-6
    record(5, "metric oracles", ok,
           f"100 pairs, {mismatches} F/MAE mismatches, S/E in [0,1]: {in_range}, |S,E - 1| on pred=gt {fixed_dev:.1e}")
    assert ok


def test_criterion_06_loss_identities():
    rng = np.random.default_rng(6)
    cfg = net.NetworkConfig(input_size=64, encoder_widths=(2, 3, 3, 4, 4, 4), fcc_channels=4,
                            dmp=dmp.DmpConfig(channels=4, groups=2))
    params = net.init_params(cfg, 0, dtype=np.float64)
    rgb, depth = rng.uniform(0, 1, (2, 1, 3, 64, 64))
    g = (rng.random((1, 1, 64, 64)) > 0.5).astype(np.float64)
    with Tape() as tape:
        out = net.forward(t64(rgb), t64(depth), params, cfg)
        total, l_r, _ = net.loss_total(out["s_f"], out["s_r"], out["s_d"], g, 0.0)
    grads_total = backward(total, tape, leaves=params.values())
    with Tape() as tape:
        out = net.forward(t64(rgb), t64(depth), params, cfg)
        only_r = net.loss_bce(out["s_f"], g)
    grads_r = backward(only_r, tape, leaves=params.values())
    reduces = total.item() == only_r.item() and all(
        np.array_equal(a, b) for a, b in zip(grads_total, grads_r))
    toy_global = out["s_r"].shape[2]
    lam_toy = net.auto_lambda(64, toy_global)
    lam_full = net.auto_lambda(320, 320 // 16)
    auto_total, a_r, a_g = net.loss_total(out["s_f"], out["s_r"], out["s_d"], g, "auto")
    auto_matches = auto_total.item() == pytest.approx(a_r.item() + 256.0 * a_g.item(), rel=1e-12)
    ok = reduces and lam_toy == 256 and lam_full == 256 and toy_global == 4 and auto_matches
    record(6, "loss identities", ok,
           f"lambda=0 equals refined loss (value and grads): {reduces}; auto lambda 64->{toy_global}: {lam_toy:g}, "
           f"320->20: {lam_full:g}")
    assert ok


TREND_EPOCHS = 20
TREND_SEEDS = (0, 1, 2)


@pytest.mark.slow
def test_criterion_07_training_trend():
    start = time.monotonic()
    scfg = synth.SynthConfig(image_size=64, n_train=200, n_test=50, rgb_contrast=0.2, depth_contrast=0.9, seed=0)
    train_set, test_set = synth.generate_split(scfg, "train"), synth.generate_split(scfg, "test")
    results = {"rgbd": [], "rgb": []}
    for modality in results:
        cfg = net.NetworkConfig(input_size=64, modality=modality)
        for seed in TREND_SEEDS:
            tcfg = TrainConfig(lr=2e-3, weight_decay=5e-4, epochs=TREND_EPOCHS, batch_size=8, seed=seed)
            params, _ = train(cfg, tcfg, train_set, None)
            results[modality].append(evaluate_mae(params, cfg, test_set))
    elapsed = time.monotonic() - start
    full, rgb_only = float(np.median(results["rgbd"])), float(np.median(results["rgb"]))
    ok = full <= 0.05 and full <= 0.8 * rgb_only and elapsed < 45 * 60
    per_seed = ", ".join(f"{a:.4f}/{b:.4f}" for a, b in zip(results["rgbd"], results["rgb"]))
    record(7, "toy training trend", ok,
           f"median test MAE full {full:.4f} (<= 0.05) vs rgb-only {rgb_only:.4f} (ratio {full / rgb_only:.3f} <= 0.8), "
           f"per seed full/rgb {per_seed}, {TREND_EPOCHS} epochs, {elapsed / 60:.1f} min < 45")
    assert ok, results


def test_criterion_08_pipeline_shape():
    shapes = {}
    ok = True
    for size in (32, 64, 320):
        cfg = net.NetworkConfig(input_size=size)
        params = net.init_params(cfg, 0)
        x = Tensor(np.random.default_rng(size).uniform(0, 1, (1, 3, size, size)).astype(np.float32))
        out = net.forward(x, x, params, cfg)
        got = [s.shape[-1] for s in out["encoder_rgb"]]
        want = [size // f for f in (1, 2, 4, 8, 16, 16)]
        ok &= got == want and [s.shape[-2] for s in out["encoder_rgb"]] == want
        ok &= out["s_f"].shape[-2:] == (size, size) and out["s_r"].shape[-1] == size // 16
        shapes[size] = got
    record(8, "pipeline shape", ok, "; ".join(f"{k}: {v}" for k, v in shapes.items()))
    assert ok


def test_criterion_09_determinism(tmp_path):
    cfg = config.parse("input_size = 32\nimage_size = 32\nn_train = 8\nn_test = 4\nepochs = 2\nbatch_size = 4\n"
                       "lr = 1e-3\nseed = 9\n")
    cmd_gen_data(cfg, tmp_path / "data")
    cmd_train(cfg, tmp_path / "data", tmp_path / "a.dmpc")
    cmd_train(cfg, tmp_path / "data", tmp_path / "b.dmpc")
    a, b = (tmp_path / "a.dmpc").read_bytes(), (tmp_path / "b.dmpc").read_bytes()
    init = dmpt.encode_checkpoint({k: v.data for k, v in net.init_params(cfg.network, 9).tensors.items()})
    ok = a == b and a != init
    record(9, "training determinism", ok, f"two runs, {len(a)}-byte checkpoints identical: {a == b}, trained: {a != init}")
    assert ok


def test_criterion_10_persistence(tmp_path):
    rng = np.random.default_rng(10)
    exact = True
    for i in range(20):
        named = {f"t{j}.{rng.integers(1000)}": rng.standard_normal(tuple(rng.integers(1, 5, rng.integers(0, 5))))
                 .astype(np.float32) for j in range(int(rng.integers(0, 6)))}
        dmpt.save_checkpoint(tmp_path / "c.dmpc", named)
        back = dmpt.load_checkpoint(tmp_path / "c.dmpc")
        exact &= list(back) == list(named) and all(back[k].tobytes() == v.tobytes() and back[k].shape == v.shape
                                                   for k, v in named.items())
        chans = 1 if i % 2 else 3
        img = rng.integers(0, 256, (chans, int(rng.integers(1, 20)), int(rng.integers(1, 20))), dtype=np.uint8)
        path = tmp_path / ("i.pgm" if chans == 1 else "i.ppm")
        save_image(path, img.astype(np.float32) / np.float32(255))
        exact &= np.array_equal(to_uint8(load_image(path)), img) and path.read_bytes() == encode(img)
        exact &= np.array_equal(decode(path.read_bytes()), img)
    record(10, "persistence round-trips", exact, "20 random checkpoints and 20 random 8-bit images, bit-exact")
    assert exact
