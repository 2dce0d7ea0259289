"""Synthetic RGB-D saliency scenes.

Each scene is a noisy, slightly shaded background with a few far-away
clutter shapes and one salient foreground shape. ``rgb_contrast`` and
``depth_contrast`` blend the object's appearance from "identical to what is
behind it" (0) to "clearly separated" (1) in each modality independently.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from dmpnet.dataset import Sample, write_split
from dmpnet.netpbm import to_uint8


@dataclass
class SynthConfig:
    image_size: int = 64
    n_train: int = 200
    n_test: int = 50
    shapes_min: int = 2
    shapes_max: int = 5
    depth_contrast: float = 0.9
    rgb_contrast: float = 0.2
    clutter: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.image_size % 16:
            raise ValueError(f"image_size must be divisible by 16, got {self.image_size}")
        if not 0 <= self.shapes_min <= self.shapes_max:
            raise ValueError("need 0 <= shapes_min <= shapes_max")
        for name in ("depth_contrast", "rgb_contrast", "clutter"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.n_train < 0 or self.n_test < 0:
            raise ValueError("sample counts must be non-negative")


def _shape_mask(rng: np.random.Generator, size: int, center_lo: float, center_hi: float,
                r_lo: float, r_hi: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    cy, cx = rng.uniform(center_lo, center_hi, size=2) * size
    ry, rx = rng.uniform(r_lo, r_hi, size=2) * size
    kind = rng.integers(3)
    if kind == 0:  # ellipse
        return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    if kind == 1:  # axis-aligned rectangle
        return (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
    # two overlapping ellipses
    dy, dx = rng.uniform(-0.5, 0.5, size=2) * np.array([ry, rx])
    a = ((yy - cy) / ry) ** 2 + ((xx - cx) / (0.6 * rx)) ** 2 <= 1.0
    b = ((yy - cy - dy) / (0.6 * ry)) ** 2 + ((xx - cx - dx) / rx) ** 2 <= 1.0
    return a | b


def generate_scene(rng: np.random.Generator, cfg: SynthConfig, sid: str) -> Sample:
    size = cfg.image_size
    base = rng.uniform(0.3, 0.7, size=3)
    # background: flat colour with a weak linear shading in a random direction
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1) - 0.5
    theta = rng.uniform(0, 2 * np.pi)
    shade = np.cos(theta) * yy + np.sin(theta) * xx
    rgb = base[:, None, None] + 0.05 * shade[None]
    # depth: a far ground ramp in a random direction
    phi = rng.uniform(0, 2 * np.pi)
    depth = 0.2 + 0.1 * (np.cos(phi) * yy + np.sin(phi) * xx)

    amp = 0.3 * cfg.clutter
    for _ in range(int(rng.integers(cfg.shapes_min, cfg.shapes_max + 1))):
        m = _shape_mask(rng, size, 0.0, 1.0, 0.08, 0.22)
        rgb[:, m] = (base + rng.uniform(-amp, amp, size=3))[:, None]
        depth[m] = rng.uniform(0.15, 0.4)

    mask = np.zeros((size, size), dtype=bool)
    while mask.sum() < 0.03 * size * size:
        mask = _shape_mask(rng, size, 0.3, 0.7, 0.12, 0.28)
    target = np.clip(base + 0.45 * rng.choice([-1.0, 1.0], size=3), 0.0, 1.0)
    rc = cfg.rgb_contrast
    rgb[:, mask] = (1 - rc) * rgb[:, mask] + rc * target[:, None]
    near = rng.uniform(0.75, 0.95)
    dc = cfg.depth_contrast
    depth[mask] = (1 - dc) * depth[mask] + dc * near

    rgb = rgb + rng.normal(0.0, 0.02, size=rgb.shape)
    depth = depth + rng.normal(0.0, 0.01, size=depth.shape)
    # quantize so the in-memory sample equals what is written to disk
    rgb = to_uint8(np.clip(rgb, 0, 1)).astype(np.float32) / np.float32(255)
    depth = to_uint8(np.clip(depth, 0, 1)).astype(np.float32)[None] / np.float32(255)
    gt = mask.astype(np.float32)[None]
    return Sample(sid, rgb.astype(np.float32), depth.astype(np.float32), gt)


def generate_split(cfg: SynthConfig, split: str) -> list:
    """Deterministic samples for ``"train"`` or ``"test"``; the two use independent streams."""
    if split not in ("train", "test"):
        raise ValueError(f"unknown split {split!r}")
    train_ss, test_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    ss, count = (train_ss, cfg.n_train) if split == "train" else (test_ss, cfg.n_test)
    rng = np.random.default_rng(ss)
    return [generate_scene(rng, cfg, f"{split}_{i:04d}") for i in range(count)]


def synth_generate(cfg: SynthConfig, out_dir) -> Path:
    out = Path(out_dir)
    write_split(out / "train", generate_split(cfg, "train"))
    write_split(out / "test", generate_split(cfg, "test"))
    return out


def rgb_threshold_map(sample: Sample) -> np.ndarray:
    """Saliency heuristic from colour alone: L-inf distance to the median image colour."""
    med = np.median(sample.rgb.reshape(3, -1), axis=1)
    return np.abs(sample.rgb - med[:, None, None]).max(axis=0)


def depth_map_heuristic(sample: Sample) -> np.ndarray:
    """Saliency heuristic from depth alone: nearer is more salient."""
    return sample.depth[0]
