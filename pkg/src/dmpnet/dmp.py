"""Dynamic message propagation over RGB feature graphs conditioned on depth.

Each pixel of the RGB feature map is a node. For every node, nine neighbours
are read at learned, continuous locations (the fixed 3x3 offsets plus a
predicted walk); each depth level turns its own feature map into per-node
group affinities and per-neighbour filter weights; their weighted sum is the
message, and the node is updated residually.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from dmpnet import ops
from dmpnet.tensor import Tensor, record

#: The fixed 3x3 receptive set, (row, col) offsets in row-major order.
RECEPTIVE_OFFSETS = np.array(
    [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 0), (0, 1), (1, -1), (1, 0), (1, 1)], dtype=np.int64
)
SAMPLE_COUNT = len(RECEPTIVE_OFFSETS)
FUSE_MODES = ("residual", "concat")


@dataclass
class DmpConfig:
    channels: int = 16
    sample_count: int = SAMPLE_COUNT
    groups: int = 4
    depth_levels: tuple = (3, 4, 5)
    iterations: int = 1
    level_weights: Optional[tuple] = None
    fuse_mode: str = "residual"
    affinity_softmax: bool = False

    def __post_init__(self):
        self.depth_levels = tuple(int(v) for v in self.depth_levels)
        if self.level_weights is None:
            self.level_weights = tuple(1.0 for _ in self.depth_levels)
        self.level_weights = tuple(float(v) for v in self.level_weights)
        if self.sample_count != SAMPLE_COUNT:
            raise ValueError(f"sample_count must equal the 3x3 receptive set size {SAMPLE_COUNT}")
        if self.groups < 1 or self.channels % self.groups:
            raise ValueError(f"channels ({self.channels}) must be divisible by groups ({self.groups})")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if len(self.level_weights) != len(self.depth_levels):
            raise ValueError("one level weight per depth level is required")
        if not self.depth_levels:
            raise ValueError("at least one depth level is required")
        if self.fuse_mode not in FUSE_MODES:
            raise ValueError(f"fuse_mode must be one of {FUSE_MODES}, got {self.fuse_mode!r}")


@dataclass
class Conv:
    weight: Tensor
    bias: Optional[Tensor] = None

    def __call__(self, x: Tensor, padding: int = 0, stride: int = 1, dilation: int = 1) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=stride, padding=padding, dilation=dilation)

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def named(self, prefix: str) -> dict:
        out = {f"{prefix}.weight": self.weight}
        if self.bias is not None:
            out[f"{prefix}.bias"] = self.bias
        return out


@dataclass
class DmpParams:
    rgb_walk: Conv
    depth_walk: dict
    affinity: dict
    filter: dict
    alpha: Tensor
    fuse: Optional[Conv] = None

    def named(self, prefix: str = "dmp") -> dict:
        out = {}
        out.update(self.rgb_walk.named(f"{prefix}.walk.rgb"))
        for lvl in self.depth_walk:
            out.update(self.depth_walk[lvl].named(f"{prefix}.walk.l{lvl}"))
            out.update(self.affinity[lvl].named(f"{prefix}.affinity.l{lvl}"))
            out.update(self.filter[lvl].named(f"{prefix}.filter.l{lvl}"))
        out[f"{prefix}.alpha"] = self.alpha
        if self.fuse is not None:
            out.update(self.fuse.named(f"{prefix}.fuse"))
        return out


def _conv(out_c, in_c, k, rng, dtype, zero):
    fan_in = in_c * k * k
    if zero:
        w = np.zeros((out_c, in_c, k, k))
    else:
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(out_c, in_c, k, k))
    return Conv(Tensor(w, requires_grad=True, dtype=dtype), Tensor(np.zeros(out_c), requires_grad=True, dtype=dtype))


def init_dmp_params(cfg: DmpConfig, rng: Optional[np.random.Generator] = None, zero: bool = True,
                    dtype=np.float32) -> DmpParams:
    """Build DMP parameters.

    Walk kernels and ``alpha`` always start at zero. With ``zero=False`` the
    affinity and filter kernels are Kaiming-uniform so that ``alpha`` gets a
    non-zero gradient on the first step; the module is still the identity at
    initialization because ``alpha`` is zero.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    c, k, g = cfg.channels, cfg.sample_count, cfg.groups
    levels = cfg.depth_levels
    fuse = _conv(c, 2 * c, 1, rng, dtype, zero) if cfg.fuse_mode == "concat" else None
    return DmpParams(
        rgb_walk=_conv(2 * k, c, 3, rng, dtype, True),
        depth_walk={l: _conv(2 * k, c, 3, rng, dtype, True) for l in levels},
        affinity={l: _conv(k * g, c, 3, rng, dtype, zero) for l in levels},
        filter={l: _conv(k, c, 3, rng, dtype, zero) for l in levels},
        alpha=Tensor(np.zeros(1), requires_grad=True, dtype=dtype),
        fuse=fuse,
    )


# --------------------------------------------------------------------- stages


def compute_walks(features: Tensor, walk_kernel: Conv, sample_count: int = SAMPLE_COUNT) -> Tensor:
    """Raw 3x3 conv output reshaped to (n, K, 2, h, w): (row, col) walk per sampled node."""
    if walk_kernel.out_channels != 2 * sample_count:
        raise ValueError(
            f"walk kernel must produce {2 * sample_count} channels, got {walk_kernel.out_channels}"
        )
    off = walk_kernel(features, padding=1)
    n, _, h, w = off.shape
    return ops.reshape(off, (n, sample_count, 2, h, w))


def base_locations(h: int, w: int, dtype=np.float32) -> np.ndarray:
    """p_i + p_j for every node i and receptive offset j, shape (K, 2, h, w)."""
    rows = np.arange(h).reshape(1, h, 1) + RECEPTIVE_OFFSETS[:, 0].reshape(-1, 1, 1)
    cols = np.arange(w).reshape(1, 1, w) + RECEPTIVE_OFFSETS[:, 1].reshape(-1, 1, 1)
    rows = np.broadcast_to(rows, (SAMPLE_COUNT, h, w))
    cols = np.broadcast_to(cols, (SAMPLE_COUNT, h, w))
    return np.stack([rows, cols], axis=1).astype(dtype)


def sample_nodes(features: Tensor, walks: Tensor) -> Tensor:
    """Bilinearly read ``features`` at p_i + p_j + walk_j; returns (n, K, C, h, w)."""
    n, c, h, w = features.shape
    k = walks.shape[1]
    if walks.shape != (n, k, 2, h, w):
        raise ValueError(f"walks shape {walks.shape} does not match features {features.shape}")
    base = np.broadcast_to(base_locations(h, w, features.dtype), walks.shape)
    loc = ops.add(walks, base)
    coords = ops.reshape(ops.transpose(loc, (0, 1, 3, 4, 2)), (n, k * h * w, 2))
    vals = ops.bilinear_sample(features, coords)
    return ops.transpose(ops.reshape(vals, (n, c, k, h, w)), (0, 2, 1, 3, 4))


def depth_affinity_weights(depth_features: Tensor, affinity_kernel: Conv, weight_kernel: Conv,
                           groups: int, sample_count: int = SAMPLE_COUNT, softmax: bool = False):
    """Per-node group affinities (n, K*G, h, w) and filter weights (n, K, h, w)."""
    if affinity_kernel.out_channels != sample_count * groups:
        raise ValueError(
            f"affinity kernel must produce K*G={sample_count * groups} channels, got {affinity_kernel.out_channels}"
        )
    if weight_kernel.out_channels != sample_count:
        raise ValueError(f"weight kernel must produce K={sample_count} channels, got {weight_kernel.out_channels}")
    a = affinity_kernel(depth_features, padding=1)
    if softmax:
        n, _, h, w = a.shape
        a5 = ops.softmax(ops.reshape(a, (n, sample_count, groups, h, w)), axis=1)
        a = ops.reshape(a5, (n, sample_count * groups, h, w))
    wt = weight_kernel(depth_features, padding=1)
    return a, wt


def message(sampled: Sequence[Tensor], affinities: Sequence[Tensor], weights: Sequence[Tensor],
            level_weights: Sequence[float], groups: int) -> Tensor:
    """sum_l beta_l sum_j A_l[i, j, group(c)] * h_l[j, c] * W_l[i, j], per location i.

    ``sampled[l]`` is (n, K, C, h, w); ``affinities[l]`` is (n, K*G, h, w) with
    node-major channel order; ``weights[l]`` is (n, K, h, w).
    """
    if not (len(sampled) == len(affinities) == len(weights) == len(level_weights)):
        raise ValueError("message: one sampled/affinity/weight/beta entry per level is required")
    n, k, c, h, w = sampled[0].shape
    if c % groups:
        raise ValueError(f"message: channels {c} not divisible by groups {groups}")
    cg = c // groups
    for s, a, wt in zip(sampled, affinities, weights):
        if s.shape != (n, k, c, h, w):
            raise ValueError(f"message: sampled shape {s.shape} differs from {(n, k, c, h, w)}")
        if a.shape != (n, k * groups, h, w):
            raise ValueError(f"message: affinity shape {a.shape}, expected {(n, k * groups, h, w)}")
        if wt.shape != (n, k, h, w):
            raise ValueError(f"message: weight shape {wt.shape}, expected {(n, k, h, w)}")

    dtype = sampled[0].dtype
    hs = [s.data.reshape(n, k, groups, cg, h, w) for s in sampled]
    As = [a.data.reshape(n, k, groups, 1, h, w) for a in affinities]
    Ws = [wt.data.reshape(n, k, 1, 1, h, w) for wt in weights]
    betas = [dtype.type(b) for b in level_weights]

    m = np.zeros((n, groups, cg, h, w), dtype=dtype)
    for b, hv, av, wv in zip(betas, hs, As, Ws):
        if b:
            m += b * (hv * av * wv).sum(axis=1)
    out = Tensor(m.reshape(n, c, h, w))

    def vjp(g):
        g6 = g.reshape(n, 1, groups, cg, h, w)
        d_h, d_a, d_w = [], [], []
        for b, hv, av, wv in zip(betas, hs, As, Ws):
            gh = b * g6 * hv  # (n, k, G, cg, h, w)
            d_h.append((b * g6 * av * wv).reshape(n, k, c, h, w))
            d_a.append((gh * wv).sum(axis=3).reshape(n, k * groups, h, w))
            d_w.append((gh * av).sum(axis=(2, 3)))
        return d_h + d_a + d_w

    return record("message", out, tuple(sampled) + tuple(affinities) + tuple(weights), vjp)


def update(h: Tensor, m: Tensor, alpha: Tensor, fuse_mode: str = "residual", fuse: Optional[Conv] = None) -> Tensor:
    ops.check_same_shape("update", h.shape, m.shape)
    if fuse_mode == "residual":
        return ops.relu(ops.add(h, ops.scale(m, alpha)))
    if fuse_mode == "concat":
        if fuse is None:
            raise ValueError("concat update needs a fuse kernel")
        return ops.relu(fuse(ops.concat_channels([h, m])))
    raise ValueError(f"unknown fuse mode {fuse_mode!r}")


def align_depth(x: Tensor, h: int, w: int) -> Tensor:
    """Bring a depth feature map to (h, w): stride-matched max pooling down, bilinear up."""
    xh, xw = x.shape[2:]
    if (xh, xw) == (h, w):
        return x
    if xh > h:
        if xh % h or xw % w or xh // h != xw // w:
            raise ValueError(f"cannot max-pool {xh}x{xw} down to {h}x{w} with a square stride")
        r = xh // h
        return ops.maxpool2d(x, r, r)
    return ops.resize_bilinear(x, h, w)


def dmp_forward(rgb_features: Tensor, depth_features: Sequence[Tensor], params: DmpParams, cfg: DmpConfig,
                return_message: bool = False):
    """Run ``cfg.iterations`` rounds of walk -> sample -> affinity/weight -> message -> update.

    ``depth_features`` must already be aligned to the RGB map's extents, one
    entry per ``cfg.depth_levels``. The sampling walk for level ``l`` is the
    RGB walk plus that level's depth walk.
    """
    if len(depth_features) != len(cfg.depth_levels):
        raise ValueError(f"expected {len(cfg.depth_levels)} depth levels, got {len(depth_features)}")
    for d in depth_features:
        ops.check_same_shape("dmp_forward", rgb_features.shape, d.shape)

    k = cfg.sample_count
    depth_walks, affinities, weights = [], [], []
    for lvl, d in zip(cfg.depth_levels, depth_features):
        depth_walks.append(compute_walks(d, params.depth_walk[lvl], k))
        a, wt = depth_affinity_weights(d, params.affinity[lvl], params.filter[lvl], cfg.groups, k,
                                       cfg.affinity_softmax)
        affinities.append(a)
        weights.append(wt)

    h = rgb_features
    m = None
    for _ in range(cfg.iterations):
        rgb_walk = compute_walks(h, params.rgb_walk, k)
        sampled = [sample_nodes(h, ops.add(rgb_walk, dw)) for dw in depth_walks]
        m = message(sampled, affinities, weights, cfg.level_weights, cfg.groups)
        h = update(h, m, params.alpha, cfg.fuse_mode, params.fuse)
    return (h, m) if return_message else h
