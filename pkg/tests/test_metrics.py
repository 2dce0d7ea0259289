import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dmpnet import metrics
from dmpnet.netpbm import load_image, save_image

from oracles import brute_force_f, brute_force_mae, e_measure_direct, s_measure_direct


def random_pair(rng, size=8, p_fg=0.4):
    gt = (rng.random((size, size)) < p_fg).astype(np.float64)
    if not gt.any():
        gt[rng.integers(size), rng.integers(size)] = 1
    pred = np.round(rng.random((size, size)) * 255) / 255
    return pred, gt


def blob_gt(rng, size=16):
    yy, xx = np.mgrid[0:size, 0:size]
    cy, cx = rng.uniform(3, size - 3, 2)
    r = rng.uniform(2, size / 3)
    gt = ((yy - cy) ** 2 + (xx - cx) ** 2 <= r * r).astype(np.float64)
    if not gt.any():
        gt[int(cy), int(cx)] = 1
    return gt


pred_maps = arrays(np.float64, (6, 6), elements=st.floats(0, 1))
gt_maps = arrays(np.bool_, (6, 6))


# --------------------------------------------------------------------- MAE


def test_mae_examples():
    g = np.eye(4)
    assert metrics.mae(g, g) == 0
    assert metrics.mae(np.ones((3, 3)), np.zeros((3, 3))) == 1


def test_mae_matches_loop():
    rng = np.random.default_rng(0)
    for _ in range(20):
        pred, gt = random_pair(rng)
        assert metrics.mae(pred, gt) == pytest.approx(brute_force_mae(pred, gt), abs=1e-12)


def test_mae_extent_mismatch():
    with pytest.raises(ValueError, match="extents"):
        metrics.mae(np.zeros((2, 2)), np.zeros((2, 3)))


@settings(max_examples=50, deadline=None)
@given(pred=pred_maps, gt=gt_maps)
def test_mae_joint_inversion_symmetry(pred, gt):
    g = gt.astype(np.float64)
    assert metrics.mae(pred, g) == pytest.approx(metrics.mae(1 - pred, 1 - g), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(pred=pred_maps, gt=gt_maps, seed=st.integers(0, 2**31))
def test_mae_and_f_permutation_invariant(pred, gt, seed):
    g = gt.astype(np.float64)
    g.flat[0] = 1.0
    perm = np.random.default_rng(seed).permutation(g.size)
    pp, gp = pred.ravel()[perm].reshape(6, 6), g.ravel()[perm].reshape(6, 6)
    assert metrics.mae(pp, gp) == pytest.approx(metrics.mae(pred, g), abs=1e-12)
    assert metrics.f_measure_max(pp, gp)[0] == metrics.f_measure_max(pred, g)[0]


# --------------------------------------------------------------------- F-measure


def test_f_perfect_prediction():
    gt = (np.random.default_rng(1).random((8, 8)) > 0.5).astype(float)
    f, pr = metrics.f_measure_max(gt, gt)
    assert f == 1.0
    assert pr.shape == (256, 2)


@pytest.mark.parametrize("tp,fp,fn", [(2, 2, 2), (3, 1, 1), (1, 9, 9), (7, 0, 0)])
def test_f_equal_precision_recall_gives_that_value(tp, fp, fn):
    p, r, f = metrics.f_from_counts(np.array([tp]), np.array([fp]), np.array([fn]))
    assert p[0] == r[0] == pytest.approx(tp / (tp + fp))
    assert f[0] == pytest.approx(p[0])


def test_f_requires_positive_gt():
    with pytest.raises(ValueError, match="undefined recall"):
        metrics.f_measure_max(np.ones((3, 3)) * 0.5, np.zeros((3, 3)))


def test_f_empty_prediction_has_zero_precision():
    tp, fp, fn = np.array([0]), np.array([0]), np.array([3])
    p, r, f = metrics.f_from_counts(tp, fp, fn)
    assert p[0] == 0 and r[0] == 0 and f[0] == 0


@pytest.mark.parametrize("seed", range(10))
def test_f_matches_brute_force_sweep(seed):
    rng = np.random.default_rng(seed)
    for _ in range(10):
        pred, gt = random_pair(rng)
        f, pr = metrics.f_measure_max(pred, gt)
        f_ref, precisions, recalls = brute_force_f(pred, gt)
        assert f == f_ref
        np.testing.assert_array_equal(pr[:, 0], precisions)
        np.testing.assert_array_equal(pr[:, 1], recalls)


def test_f_never_decreases_with_more_thresholds():
    rng = np.random.default_rng(2)
    for _ in range(20):
        pred, gt = random_pair(rng)
        coarse = np.linspace(0, 1, 11)
        finer = np.union1d(coarse, rng.random(7))
        assert metrics.f_measure_max(pred, gt, levels=finer)[0] >= metrics.f_measure_max(pred, gt, levels=coarse)[0]
        assert metrics.f_measure_max(pred, gt)[0] >= metrics.f_measure_max(pred, gt, levels=coarse)[0]


def test_normalization_applies_to_threshold_metrics_only():
    gt = np.array([[1.0, 0.0], [0.0, 0.0]])
    pred = np.array([[0.4, 0.2], [0.2, 0.2]])
    assert metrics.f_measure_max(pred, gt)[0] == 1.0
    assert metrics.mae(pred, gt) == pytest.approx((0.6 + 0.6) / 4)


# --------------------------------------------------------------------- S-measure


def test_s_perfect_prediction():
    rng = np.random.default_rng(3)
    for _ in range(10):
        gt = blob_gt(rng)
        assert metrics.s_measure(gt, gt) == pytest.approx(1.0, abs=1e-6)


def test_s_degenerate_gts():
    pred = np.random.default_rng(4).random((5, 5))
    assert metrics.s_measure(np.zeros((5, 5)), np.zeros((5, 5))) == 1.0
    assert metrics.s_measure(np.ones((5, 5)), np.ones((5, 5))) == 1.0
    assert 0 <= metrics.s_measure(pred, np.zeros((5, 5))) <= 1


@pytest.mark.parametrize("seed", range(5))
def test_s_matches_direct_definition(seed):
    rng = np.random.default_rng(seed)
    for _ in range(4):
        gt = blob_gt(rng, 12)
        pred = np.clip(gt * rng.uniform(0.3, 1) + rng.normal(0, 0.3, gt.shape), 0, 1)
        assert metrics.s_measure(pred, gt) == pytest.approx(s_measure_direct(pred, gt), abs=1e-12)
        pred, gt2 = random_pair(rng, 9)
        assert metrics.s_measure(pred, gt2) == pytest.approx(s_measure_direct(pred, gt2), abs=1e-12)


def test_s_centroid_rounds_half_up():
    g = np.zeros((4, 6), dtype=bool)
    g[0, 1] = g[0, 2] = True  # column mean 2.5 (1-based) -> 3, row mean 1
    assert metrics._centroid(g) == (3, 1)


def test_s_range_on_random_pairs():
    rng = np.random.default_rng(5)
    for _ in range(100):
        pred, gt = random_pair(rng)
        assert 0.0 <= metrics.s_measure(pred, gt) <= 1.0


def test_s_inverted_prediction_scores_lower():
    rng = np.random.default_rng(6)
    for _ in range(20):
        gt = blob_gt(rng)
        assert metrics.s_measure(1 - gt, gt) < metrics.s_measure(gt, gt)


# --------------------------------------------------------------------- E-measure


def test_e_perfect_prediction():
    rng = np.random.default_rng(7)
    for _ in range(10):
        gt = blob_gt(rng)
        assert metrics.e_measure_max(gt, gt) == pytest.approx(1.0, abs=1e-6)


def test_e_constant_mean_prediction_below_one():
    rng = np.random.default_rng(8)
    for _ in range(10):
        gt = blob_gt(rng)
        assert metrics.e_measure_max(np.full(gt.shape, gt.mean()), gt) < 1.0


def test_e_range_and_direct_definition():
    rng = np.random.default_rng(9)
    for _ in range(30):
        pred, gt = random_pair(rng, 6)
        e = metrics.e_measure_max(pred, gt)
        assert 0.0 <= e <= 1.0
        assert e == pytest.approx(e_measure_direct(pred, gt), abs=1e-12)


def test_e_curve_has_one_value_per_threshold():
    pred, gt = random_pair(np.random.default_rng(10))
    assert metrics.e_measure_curve(pred, gt).shape == (256,)


# --------------------------------------------------------------------- reports and directories


def test_report_formats():
    pred, gt = random_pair(np.random.default_rng(11))
    rep = metrics.evaluate_pair(pred, gt)
    lines = rep.to_csv().strip().splitlines()
    assert [l.split(",")[0] for l in lines] == ["mae", "max_f", "s_measure", "max_e"]
    assert "images" in rep.to_table()
    pr = rep.pr_csv().splitlines()
    assert pr[0] == "threshold,precision,recall" and len(pr) == 257


def _write_maps(root, maps):
    root.mkdir(parents=True, exist_ok=True)
    for name, m in maps.items():
        save_image(root / f"{name}.pgm", m[None])


def test_evaluate_dir_single_perfect_pair(tmp_path):
    gt = blob_gt(np.random.default_rng(12))
    _write_maps(tmp_path / "gt", {"a": gt})
    rep = metrics.evaluate_dir(tmp_path / "gt", tmp_path / "gt")
    assert (rep.mae, rep.max_f) == (0.0, 1.0)
    assert rep.s_measure == pytest.approx(1.0, abs=1e-6) and rep.max_e == pytest.approx(1.0, abs=1e-6)


def test_evaluate_dir_is_mean_of_per_image_loop(tmp_path):
    rng = np.random.default_rng(13)
    gts = {f"img{i}": blob_gt(rng) for i in range(3)}
    preds = {k: np.round(np.clip(g * 0.7 + rng.random(g.shape) * 0.3, 0, 1) * 255) / 255 for k, g in gts.items()}
    _write_maps(tmp_path / "gt", gts)
    _write_maps(tmp_path / "pred", preds)
    rep = metrics.evaluate_dir(tmp_path / "pred", tmp_path / "gt")
    # compare on the stored 8-bit maps, which are what the directory evaluation sees
    preds = {k: load_image(tmp_path / "pred" / f"{k}.pgm")[0] for k in gts}
    gts = {k: load_image(tmp_path / "gt" / f"{k}.pgm")[0] for k in gts}
    per = [metrics.evaluate_pair(preds[k], gts[k]) for k in sorted(gts)]
    assert rep.count == 3
    for key in ("mae", "max_f", "s_measure", "max_e"):
        assert getattr(rep, key) == pytest.approx(np.mean([getattr(r, key) for r in per]), abs=1e-12)
    assert rep.mae == pytest.approx(np.mean([brute_force_mae(preds[k], gts[k]) for k in gts]), abs=1e-12)


def test_evaluate_dir_missing_prediction(tmp_path):
    gt = blob_gt(np.random.default_rng(14))
    _write_maps(tmp_path / "gt", {"a": gt, "b": gt})
    _write_maps(tmp_path / "pred", {"a": gt})
    with pytest.raises(FileNotFoundError, match="b.pgm"):
        metrics.evaluate_dir(tmp_path / "pred", tmp_path / "gt")
