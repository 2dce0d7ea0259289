"""The two-stream saliency network at toy scale, plus its composite loss.

Layout: a shared-weight (Siamese) six-level encoder runs on the RGB image
and on the three-channel depth image. Levels 4 and 5 refine RGB features
with DMP modules that read depth levels 3-5; the remaining levels fuse the
two streams elementwise. A densely linked decoder of multi-branch FF blocks
runs coarse to fine, and three 1x1 heads produce the refined and the two
global saliency maps.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from dmpnet import ops
from dmpnet.dmp import Conv, DmpConfig, align_depth, dmp_forward, init_dmp_params
from dmpnet.tensor import Tensor

NUM_LEVELS = 6
#: Spatial scale of each encoder level relative to the input.
LEVEL_SCALES = (1, 2, 4, 8, 16, 16)
MODALITIES = ("rgbd", "rgb", "depth")


@dataclass
class NetworkConfig:
    input_size: int = 64
    encoder_widths: tuple = (8, 16, 16, 24, 24, 24)
    fcc_channels: int = 16
    dmp_levels: tuple = (4, 5)
    dmp: DmpConfig = field(default_factory=DmpConfig)
    lambda_mode: Union[str, float] = "auto"
    modality: str = "rgbd"

    def __post_init__(self):
        self.encoder_widths = tuple(int(v) for v in self.encoder_widths)
        self.dmp_levels = tuple(int(v) for v in self.dmp_levels)
        if len(self.encoder_widths) != NUM_LEVELS:
            raise ValueError(f"encoder_widths needs {NUM_LEVELS} entries, got {len(self.encoder_widths)}")
        if self.input_size % 16:
            raise ValueError(f"input_size must be divisible by 16, got {self.input_size}")
        if self.fcc_channels % 4:
            raise ValueError(f"fcc_channels must be divisible by 4, got {self.fcc_channels}")
        for lvl in self.dmp_levels + self.dmp.depth_levels:
            if not 1 <= lvl <= NUM_LEVELS:
                raise ValueError(f"level {lvl} outside 1..{NUM_LEVELS}")
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}")
        if self.lambda_mode != "auto":
            self.lambda_mode = float(self.lambda_mode)

    def level_size(self, level: int) -> int:
        return self.input_size // LEVEL_SCALES[level - 1]

    @property
    def fused_levels(self) -> tuple:
        return tuple(l for l in range(1, NUM_LEVELS + 1) if l not in self.dmp_levels)


def auto_lambda(full_size: int, global_size: int) -> float:
    """Pixel-count balance between the refined and global maps: (full / global)^2."""
    return float(full_size / global_size) ** 2


class NetworkParams:
    """Named parameter tensors. RGB and depth streams read the same encoder entries."""

    def __init__(self, tensors: dict):
        self.tensors = dict(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __len__(self) -> int:
        return len(self.tensors)

    def names(self) -> list:
        return list(self.tensors)

    def values(self) -> list:
        return list(self.tensors.values())

    def conv(self, prefix: str) -> Conv:
        return Conv(self.tensors[f"{prefix}.weight"], self.tensors.get(f"{prefix}.bias"))

    def astype(self, dtype) -> "NetworkParams":
        return NetworkParams({k: v.astype(dtype) for k, v in self.tensors.items()})

    def copy(self) -> "NetworkParams":
        return NetworkParams({k: Tensor(v.data.copy(), requires_grad=v.requires_grad, name=k)
                              for k, v in self.tensors.items()})


def _kaiming(shape, rng):
    fan_in = int(np.prod(shape[1:]))
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(cfg: NetworkConfig, seed: int = 0, dtype=np.float32) -> NetworkParams:
    """Kaiming-uniform (fan-in) conv kernels, zero biases; DMP walks and alpha at zero."""
    rng = np.random.default_rng(seed)
    t: dict = {}

    def conv(name, out_c, in_c, k):
        t[f"{name}.weight"] = _kaiming((out_c, in_c, k, k), rng)
        t[f"{name}.bias"] = np.zeros(out_c)

    widths = cfg.encoder_widths
    k = cfg.fcc_channels
    c = cfg.dmp.channels
    prev = 3
    for lvl in range(1, NUM_LEVELS + 1):
        conv(f"encoder.l{lvl}.conv1", widths[lvl - 1], prev, 3)
        conv(f"encoder.l{lvl}.conv2", widths[lvl - 1], widths[lvl - 1], 3)
        prev = widths[lvl - 1]
    for lvl in cfg.fused_levels:
        conv(f"fcc.rgb.l{lvl}", k, widths[lvl - 1], 1)
        conv(f"fcc.depth.l{lvl}", k, widths[lvl - 1], 1)
    for lvl in cfg.dmp_levels:
        p = f"dmp.l{lvl}"
        conv(f"{p}.proj.rgb", c, widths[lvl - 1], 1)
        for d in cfg.dmp.depth_levels:
            conv(f"{p}.proj.l{d}", c, widths[d - 1], 1)
        dparams = init_dmp_params(cfg.dmp, rng, zero=False, dtype=np.float64)
        for name, tensor in dparams.named(p).items():
            t[name] = tensor.data
        conv(f"fcc.dmp.l{lvl}", k, c, 1)
    q = k // 4
    for lvl in range(1, NUM_LEVELS + 1):
        p = f"ff.l{lvl}"
        conv(f"{p}.b1", q, k, 1)
        conv(f"{p}.b3", q, k, 3)
        conv(f"{p}.b5", q, k, 5)
        conv(f"{p}.pool", q, k, 1)
    conv("head.rgb", 1, widths[-1], 1)
    conv("head.depth", 1, widths[-1], 1)
    conv("head.fused", 1, k, 1)
    return NetworkParams({name: Tensor(v, requires_grad=True, dtype=dtype, name=name) for name, v in t.items()})


def dmp_params_for(params: NetworkParams, cfg: NetworkConfig, level: int):
    from dmpnet.dmp import DmpParams

    p = f"dmp.l{level}"
    levels = cfg.dmp.depth_levels
    return DmpParams(
        rgb_walk=params.conv(f"{p}.walk.rgb"),
        depth_walk={l: params.conv(f"{p}.walk.l{l}") for l in levels},
        affinity={l: params.conv(f"{p}.affinity.l{l}") for l in levels},
        filter={l: params.conv(f"{p}.filter.l{l}") for l in levels},
        alpha=params[f"{p}.alpha"],
        fuse=params.conv(f"{p}.fuse") if f"{p}.fuse.weight" in params else None,
    )


# --------------------------------------------------------------------- stages


def encoder_forward(image: Tensor, params: NetworkParams, cfg: Optional[NetworkConfig] = None) -> list:
    """Six side outputs; level l has 1/LEVEL_SCALES[l-1] of the input resolution."""
    if image.ndim != 4 or image.shape[1] != 3:
        raise ValueError(f"encoder expects (n, 3, h, w) input, got {image.shape}")
    h, w = image.shape[2:]
    if h != w or h % 16:
        raise ValueError(f"encoder input must be square with extent divisible by 16, got {h}x{w}")
    if cfg is not None and h != cfg.input_size:
        raise ValueError(f"encoder input size {h} does not match configured input_size {cfg.input_size}")
    sides = []
    x = image
    for lvl in range(1, NUM_LEVELS + 1):
        if 2 <= lvl <= 5:
            x = ops.maxpool2d(x, 2, 2)
        dil = 2 if lvl == NUM_LEVELS else 1
        x = ops.relu(params.conv(f"encoder.l{lvl}.conv1")(x, padding=dil, dilation=dil))
        x = ops.relu(params.conv(f"encoder.l{lvl}.conv2")(x, padding=dil, dilation=dil))
        sides.append(x)
    return sides


def fcc_forward(side_outputs: list, kernels: list) -> list:
    """1x1 conv + relu per level, compressing every side output to k channels."""
    return [ops.relu(kern(x)) for x, kern in zip(side_outputs, kernels)]


def cross_modal_fuse(x_rgb: Tensor, x_d: Tensor) -> Tensor:
    """a + b + a*b, elementwise."""
    ops.check_same_shape("cross_modal_fuse", x_rgb.shape, x_d.shape)
    return ops.add(ops.add(x_rgb, x_d), ops.mul(x_rgb, x_d))


def ff_forward(x: Tensor, params: NetworkParams, prefix: str) -> Tensor:
    """Four relu branches (1x1, 3x3, 5x5, maxpool->1x1), k/4 channels each, concatenated."""
    k = x.shape[1]
    if k % 4:
        raise ValueError(f"FF input channels must be divisible by 4, got {k}")
    b1 = ops.relu(params.conv(f"{prefix}.b1")(x))
    b3 = ops.relu(params.conv(f"{prefix}.b3")(x, padding=1))
    b5 = ops.relu(params.conv(f"{prefix}.b5")(x, padding=2))
    bp = ops.relu(params.conv(f"{prefix}.pool")(ops.maxpool2d(x, 3, 1, padding=1)))
    return ops.concat_channels([b1, b3, b5, bp])


def decoder_forward(level_inputs: list, params: NetworkParams, levels: Optional[list] = None) -> list:
    """Dense coarse-to-fine decoding.

    ``level_inputs`` are ordered finest first. The FF input at a level is its
    own side feature plus every coarser FF output resized to its extent. The
    returned list is ordered coarsest first, finest last.
    """
    levels = levels if levels is not None else list(range(1, len(level_inputs) + 1))
    outs: list = []
    for idx in reversed(range(len(level_inputs))):
        x = level_inputs[idx]
        h, w = x.shape[2:]
        for coarser in outs:
            x = ops.add(x, ops.resize_bilinear(coarser, h, w))
        outs.append(ff_forward(x, params, f"ff.l{levels[idx]}"))
    return outs


def predict(last_rgb: Tensor, last_depth: Tensor, last_ff: Tensor, params: NetworkParams):
    s_r = ops.sigmoid(params.conv("head.rgb")(last_rgb))
    s_d = ops.sigmoid(params.conv("head.depth")(last_depth))
    s_f = ops.sigmoid(params.conv("head.fused")(last_ff))
    return s_r, s_d, s_f


def forward(rgb: Tensor, depth: Tensor, params: NetworkParams, cfg: NetworkConfig) -> dict:
    """Full pipeline. ``depth`` is the depth map already replicated to three channels."""
    if cfg.modality == "rgb":
        depth = rgb
    elif cfg.modality == "depth":
        rgb = depth
    enc_r = encoder_forward(rgb, params, cfg)
    enc_d = enc_r if depth is rgb else encoder_forward(depth, params, cfg)

    sides = []
    for lvl in range(1, NUM_LEVELS + 1):
        if lvl in cfg.dmp_levels:
            p = f"dmp.l{lvl}"
            size = cfg.level_size(lvl)
            h0 = ops.relu(params.conv(f"{p}.proj.rgb")(enc_r[lvl - 1]))
            deps = [
                ops.relu(params.conv(f"{p}.proj.l{d}")(align_depth(enc_d[d - 1], size, size)))
                for d in cfg.dmp.depth_levels
            ]
            refined = dmp_forward(h0, deps, dmp_params_for(params, cfg, lvl), cfg.dmp)
            sides.append(ops.relu(params.conv(f"fcc.dmp.l{lvl}")(refined)))
        else:
            xr = ops.relu(params.conv(f"fcc.rgb.l{lvl}")(enc_r[lvl - 1]))
            xd = ops.relu(params.conv(f"fcc.depth.l{lvl}")(enc_d[lvl - 1]))
            sides.append(cross_modal_fuse(xr, xd))

    decoded = decoder_forward(sides, params)
    s_r, s_d, s_f = predict(enc_r[-1], enc_d[-1], decoded[-1], params)
    return {"s_f": s_f, "s_r": s_r, "s_d": s_d, "encoder_rgb": enc_r, "encoder_depth": enc_d, "sides": sides}


# --------------------------------------------------------------------- losses

BCE_EPS = 1e-7


def loss_bce(s: Tensor, g, eps: float = BCE_EPS) -> Tensor:
    """Pixel-summed binary cross-entropy."""
    return ops.bce_sum(s, g, eps)


def downsample_gt(g: np.ndarray, size: int) -> np.ndarray:
    """Average-pool a (n, 1, H, H) ground truth down to (n, 1, size, size)."""
    n, c, h, w = g.shape
    if h % size or w % size:
        raise ValueError(f"cannot average-pool {h}x{w} to {size}x{size}")
    f = h // size
    return g.reshape(n, c, size, f, size, f).mean(axis=(3, 5))


def loss_total(s_f: Tensor, s_r: Tensor, s_d: Tensor, g: np.ndarray, lam: Union[str, float] = "auto"):
    """L_r(S_f, G) + lambda * (L_g(S_r, G') + L_g(S_d, G')) with G' the pooled ground truth.

    Returns ``(total, refined_loss, global_loss)``.
    """
    g = np.asarray(g, dtype=s_f.dtype)
    small = s_r.shape[2]
    if lam == "auto":
        lam = auto_lambda(g.shape[2], small)
    g_small = downsample_gt(g, small)
    l_r = loss_bce(s_f, g)
    l_g = ops.add(loss_bce(s_r, g_small), loss_bce(s_d, g_small))
    if lam == 0:
        return l_r, l_r, l_g
    return ops.add(l_r, ops.mul(l_g, float(lam))), l_r, l_g
