"""Named finite-difference check cases for every differentiable operation.

Each case builder takes a seed and returns ``(fn, inputs, names, sample)``
for :func:`dmpnet.gradcheck.check_gradients`. Random inputs are placed away
from the measure-zero kinks of relu, max pooling, clamping and bilinear
cell boundaries, where a central difference is not a derivative estimate.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from dmpnet import dmp, ops
from dmpnet import network as net
from dmpnet.gradcheck import CheckResult, check_gradients
from dmpnet.tensor import Tensor

SHAPE = (1, 4, 6, 6)


def _t(a):
    return Tensor(np.asarray(a, dtype=np.float64), dtype=np.float64)


def _away_from_zero(rng, shape, lo=0.05):
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(lo, 1.0, size=shape)


def _distinct(rng, shape, gap=0.01):
    n = int(np.prod(shape))
    return (rng.permutation(n) * gap - n * gap / 2).reshape(shape) + rng.uniform(0, gap / 4, size=shape)


def case_add(rng):
    return ops.add, [_t(rng.standard_normal(SHAPE)), _t(rng.standard_normal(SHAPE))], ["a", "b"], None


def case_mul(rng):
    return ops.mul, [_t(rng.standard_normal(SHAPE)), _t(rng.standard_normal(SHAPE))], ["a", "b"], None


def case_scale(rng):
    return ops.scale, [_t(rng.standard_normal(SHAPE)), _t(rng.standard_normal(1))], ["x", "s"], None


def case_relu(rng):
    return ops.relu, [_t(_away_from_zero(rng, SHAPE))], ["x"], None


def case_sigmoid(rng):
    return ops.sigmoid, [_t(3 * rng.standard_normal(SHAPE))], ["x"], None


def case_softmax(rng):
    return (lambda x: ops.softmax(x, axis=1)), [_t(rng.standard_normal(SHAPE))], ["x"], None


def case_concat(rng):
    shapes = [(1, 2, 6, 6), (1, 4, 6, 6), (1, 1, 6, 6)]
    return (lambda *xs: ops.concat_channels(list(xs))), [_t(rng.standard_normal(s)) for s in shapes], ["a", "b", "c"], None


def case_reshape_transpose(rng):
    def fn(x):
        return ops.transpose(ops.reshape(x, (1, 2, 2, 6, 6)), (0, 3, 1, 4, 2))

    return fn, [_t(rng.standard_normal(SHAPE))], ["x"], None


def case_conv2d(rng):
    x = _t(rng.standard_normal(SHAPE))
    w = _t(rng.standard_normal((3, 4, 3, 3)) * 0.3)
    b = _t(rng.standard_normal(3))
    return (lambda x, w, b: ops.conv2d(x, w, b, stride=1, padding=1)), [x, w, b], ["x", "weight", "bias"], None


def case_conv2d_strided(rng):
    x = _t(rng.standard_normal(SHAPE))
    w = _t(rng.standard_normal((2, 4, 3, 3)) * 0.3)
    b = _t(rng.standard_normal(2))
    return (lambda x, w, b: ops.conv2d(x, w, b, stride=2, padding=2, dilation=2)), [x, w, b], ["x", "weight", "bias"], None


def case_conv2d_pointwise(rng):
    x = _t(rng.standard_normal(SHAPE))
    w = _t(rng.standard_normal((5, 4, 1, 1)))
    b = _t(rng.standard_normal(5))
    return ops.conv2d, [x, w, b], ["x", "weight", "bias"], None


def case_maxpool2d(rng):
    return (lambda x: ops.maxpool2d(x, 2, 2)), [_t(_distinct(rng, SHAPE))], ["x"], None


def case_maxpool2d_overlap(rng):
    return (lambda x: ops.maxpool2d(x, 3, 1, padding=1)), [_t(_distinct(rng, SHAPE))], ["x"], None


def case_resize_up(rng):
    return (lambda x: ops.resize_bilinear(x, 9, 11)), [_t(rng.standard_normal(SHAPE))], ["x"], None


def case_resize_down(rng):
    return (lambda x: ops.resize_bilinear(x, 4, 3)), [_t(rng.standard_normal(SHAPE))], ["x"], None


def _fractional_coords(rng, n, s, lo, hi):
    whole = rng.integers(lo, hi, size=(n, s, 2)).astype(np.float64)
    return whole + rng.uniform(0.1, 0.9, size=(n, s, 2))


def case_bilinear_sample(rng):
    x = _t(rng.standard_normal(SHAPE))
    coords = _t(_fractional_coords(rng, 1, 20, -2, 7))
    return ops.bilinear_sample, [x, coords], ["x", "coords"], None


def case_bce(rng):
    s = _t(rng.uniform(0.05, 0.95, size=SHAPE))
    g = (rng.random(SHAPE) > 0.5).astype(np.float64)
    return (lambda s: ops.bce_sum(s, g)), [s], ["s"], None


def case_sum(rng):
    return ops.total, [_t(rng.standard_normal(SHAPE))], ["x"], None


def case_message(rng):
    n, k, c, g, h, w = 1, dmp.SAMPLE_COUNT, 4, 2, 4, 4
    levels = 2
    hs = [_t(rng.standard_normal((n, k, c, h, w))) for _ in range(levels)]
    As = [_t(rng.standard_normal((n, k * g, h, w))) for _ in range(levels)]
    Ws = [_t(rng.standard_normal((n, k, h, w))) for _ in range(levels)]
    betas = [1.0, 0.7]

    def fn(*xs):
        return dmp.message(list(xs[:levels]), list(xs[levels : 2 * levels]), list(xs[2 * levels :]), betas, g)

    names = [f"h{i}" for i in range(levels)] + [f"A{i}" for i in range(levels)] + [f"W{i}" for i in range(levels)]
    return fn, hs + As + Ws, names, 60


def case_sample_nodes(rng):
    x = _t(rng.standard_normal((1, 3, 5, 5)))
    walks = _t(rng.integers(-2, 2, size=(1, dmp.SAMPLE_COUNT, 2, 5, 5)) + rng.uniform(0.1, 0.9, size=(1, dmp.SAMPLE_COUNT, 2, 5, 5)))
    return dmp.sample_nodes, [x, walks], ["features", "walks"], 80


def _smooth_dmp_setup(rng, c=4, g=2, size=4, fuse_mode="residual", softmax=False):
    """DMP inputs and parameters whose walks stay mid-cell and whose update stays positive."""
    cfg = dmp.DmpConfig(channels=c, groups=g, depth_levels=(3, 4, 5), fuse_mode=fuse_mode,
                        affinity_softmax=softmax, level_weights=(1.0, 0.5, 1.0))
    k = cfg.sample_count
    rgb = _t(rng.uniform(0.5, 1.5, size=(1, c, size, size)))
    depths = [_t(rng.uniform(0.0, 1.0, size=(1, c, size, size))) for _ in cfg.depth_levels]

    def conv(out_c, in_c, ksz, amp, bias):
        return dmp.Conv(_t(rng.uniform(-amp, amp, size=(out_c, in_c, ksz, ksz))), _t(bias + rng.uniform(-0.05, 0.05, out_c)))

    params = dmp.DmpParams(
        rgb_walk=conv(2 * k, c, 3, 0.004, 0.25),
        depth_walk={l: conv(2 * k, c, 3, 0.004, 0.25) for l in cfg.depth_levels},
        affinity={l: conv(k * g, c, 3, 0.05, 0.2) for l in cfg.depth_levels},
        filter={l: conv(k, c, 3, 0.05, 0.2) for l in cfg.depth_levels},
        alpha=_t([0.3]),
        fuse=conv(c, 2 * c, 1, 0.05, 2.0) if fuse_mode == "concat" else None,
    )
    return cfg, rgb, depths, params


def _dmp_case(rng, **kw):
    cfg, rgb, depths, params = _smooth_dmp_setup(rng, **kw)
    named = params.named("dmp")
    names = ["rgb"] + [f"depth.l{l}" for l in cfg.depth_levels] + list(named)
    inputs = [rgb] + depths + list(named.values())
    keys = list(named)
    nd = len(depths)

    def fn(*xs):
        table = dict(zip(keys, xs[1 + nd :]))

        def conv(prefix):
            return dmp.Conv(table[f"{prefix}.weight"], table.get(f"{prefix}.bias"))

        p = dmp.DmpParams(
            rgb_walk=conv("dmp.walk.rgb"),
            depth_walk={l: conv(f"dmp.walk.l{l}") for l in cfg.depth_levels},
            affinity={l: conv(f"dmp.affinity.l{l}") for l in cfg.depth_levels},
            filter={l: conv(f"dmp.filter.l{l}") for l in cfg.depth_levels},
            alpha=table["dmp.alpha"],
            fuse=conv("dmp.fuse") if "dmp.fuse.weight" in table else None,
        )
        return dmp.dmp_forward(xs[0], list(xs[1 : 1 + nd]), p, cfg)

    return fn, inputs, names, 12


def case_dmp(rng):
    return _dmp_case(rng)


def case_dmp_concat(rng):
    return _dmp_case(rng, fuse_mode="concat")


def case_dmp_softmax(rng):
    return _dmp_case(rng, softmax=True)


def micro_config() -> net.NetworkConfig:
    return net.NetworkConfig(
        input_size=16,
        encoder_widths=(2, 3, 3, 4, 4, 4),
        fcc_channels=4,
        dmp=dmp.DmpConfig(channels=4, groups=2),
    )


def smooth_network_params(params: net.NetworkParams, cfg: net.NetworkConfig, rng) -> None:
    """Move an initialized network away from exact non-differentiable points.

    At initialization the walks are zero, so every bilinear read sits exactly on
    a grid point where sampling is not differentiable in the coordinates, and
    zero biases put relu inputs of dead regions exactly at 0. Biases get small
    random values, walk biases a fractional shift, and DMP a non-zero scale.
    """
    for name in params.names():
        if name.endswith(".bias"):
            params[name].data[:] = rng.uniform(-0.05, 0.05, params[name].shape)
    for lvl in cfg.dmp_levels:
        params[f"dmp.l{lvl}.alpha"].data[:] = 0.5
        for name in params.names():
            if name.startswith(f"dmp.l{lvl}.walk.") and name.endswith(".bias"):
                params[name].data[:] = rng.uniform(0.1, 0.4, params[name].shape)


def case_end_to_end(rng):
    cfg = micro_config()
    params = net.init_params(cfg, int(rng.integers(1 << 30)), dtype=np.float64)
    smooth_network_params(params, cfg, rng)
    rgb = _t(rng.uniform(0, 1, size=(1, 3, 16, 16)))
    depth = _t(np.repeat(rng.uniform(0, 1, size=(1, 1, 16, 16)), 3, axis=1))
    gt = (rng.random((1, 1, 16, 16)) > 0.6).astype(np.float64)

    def fn(rgb, depth):
        out = net.forward(rgb, depth, params, cfg)
        total, _, _ = net.loss_total(out["s_f"], out["s_r"], out["s_d"], gt)
        return total

    return fn, [rgb, depth], ["rgb", "depth"], 48


# cases whose function contains relu / max-pool switches at data-dependent places
KINKED = {"end_to_end"}


OP_CASES: dict = {
    "add": case_add,
    "mul": case_mul,
    "scale": case_scale,
    "relu": case_relu,
    "sigmoid": case_sigmoid,
    "softmax": case_softmax,
    "concat_channels": case_concat,
    "reshape_transpose": case_reshape_transpose,
    "sum": case_sum,
    "conv2d": case_conv2d,
    "conv2d_strided": case_conv2d_strided,
    "conv2d_pointwise": case_conv2d_pointwise,
    "maxpool2d": case_maxpool2d,
    "maxpool2d_overlap": case_maxpool2d_overlap,
    "resize_bilinear_up": case_resize_up,
    "resize_bilinear_down": case_resize_down,
    "bilinear_sample": case_bilinear_sample,
    "bce_sum": case_bce,
}
DMP_CASES: dict = {
    "message": case_message,
    "sample_nodes": case_sample_nodes,
    "dmp_forward": case_dmp,
    "dmp_forward_concat": case_dmp_concat,
    "dmp_forward_softmax": case_dmp_softmax,
}
E2E_CASES: dict = {"end_to_end": case_end_to_end}
ALL_CASES: dict = {**OP_CASES, **DMP_CASES, **E2E_CASES}


def select(scope: str) -> dict:
    if scope == "all":
        return ALL_CASES
    if scope == "ops":
        return OP_CASES
    if scope == "dmp":
        return DMP_CASES
    if scope in ("end-to-end", "end_to_end", "e2e"):
        return E2E_CASES
    if scope in ALL_CASES:
        return {scope: ALL_CASES[scope]}
    raise KeyError(f"unknown gradcheck scope {scope!r}; choose all, ops, dmp, end-to-end or one of {sorted(ALL_CASES)}")


def run_case(name: str, builder: Callable, seed: int) -> CheckResult:
    """Worst relative error over all inputs of one case at one seed."""
    rng = np.random.default_rng(seed)
    fn, inputs, names, sample = builder(rng)
    results = check_gradients(fn, inputs, seed=seed, names=names, sample=sample, skip_kinks=name in KINKED)
    worst = max(r.max_rel_error for r in results)
    return CheckResult(name, worst, sum(r.checked for r in results), sum(r.skipped for r in results))
