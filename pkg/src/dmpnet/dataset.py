"""On-disk RGB-D saliency datasets.

Layout of a split directory::

    rgb/<id>.ppm     depth/<id>.pgm     gt/<id>.pgm     manifest.txt

Depth is stored near = bright (larger value is closer to the camera).
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from dmpnet.netpbm import load_image, save_image

DEPTH_COMMENT = "depth: near=bright (larger value is closer)"


@dataclass
class Sample:
    id: str
    rgb: np.ndarray  # (3, h, w) in [0, 1]
    depth: np.ndarray  # (1, h, w) in [0, 1]
    gt: np.ndarray  # (1, h, w) in {0, 1}

    def __post_init__(self):
        if self.rgb.ndim != 3 or self.rgb.shape[0] != 3:
            raise ValueError(f"{self.id}: rgb must be (3, h, w), got {self.rgb.shape}")
        hw = self.rgb.shape[1:]
        if self.depth.shape != (1,) + hw or self.gt.shape != (1,) + hw:
            raise ValueError(f"{self.id}: rgb/depth/gt extents differ")
        if not np.all((self.gt == 0) | (self.gt == 1)):
            raise ValueError(f"{self.id}: ground truth is not binary")

    @property
    def depth3(self) -> np.ndarray:
        return np.repeat(self.depth, 3, axis=0)


def write_split(root, samples: Iterable[Sample]) -> None:
    root = Path(root)
    for sub in ("rgb", "depth", "gt"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    ids = []
    for s in samples:
        save_image(root / "rgb" / f"{s.id}.ppm", s.rgb)
        save_image(root / "depth" / f"{s.id}.pgm", s.depth, comment=DEPTH_COMMENT)
        save_image(root / "gt" / f"{s.id}.pgm", s.gt)
        ids.append(s.id)
    (root / "manifest.txt").write_text("".join(f"{i}\n" for i in ids))


def read_manifest(root) -> list:
    path = Path(root) / "manifest.txt"
    if not path.exists():
        raise FileNotFoundError(f"missing manifest: {path}")
    return [line.strip() for line in path.read_text().splitlines() if line.strip()]


def read_split(root) -> list:
    root = Path(root)
    out = []
    for sid in read_manifest(root):
        rgb = load_image(root / "rgb" / f"{sid}.ppm")
        depth = load_image(root / "depth" / f"{sid}.pgm")
        gt = load_image(root / "gt" / f"{sid}.pgm")
        if rgb.shape[0] != 3 or depth.shape[0] != 1 or gt.shape[0] != 1:
            raise ValueError(f"{sid}: wrong channel counts {rgb.shape[0]}/{depth.shape[0]}/{gt.shape[0]}")
        out.append(Sample(sid, rgb, depth, gt))
    return out


def split_dirs(data_dir) -> tuple:
    """Return ``(train_dir, test_dir_or_None)`` for a dataset root or a bare split."""
    root = Path(data_dir)
    if (root / "train" / "manifest.txt").exists():
        test = root / "test"
        return root / "train", (test if (test / "manifest.txt").exists() else None)
    if (root / "manifest.txt").exists():
        return root, None
    raise FileNotFoundError(f"no dataset found under {root}")


def stack(samples: Sequence[Sample]):
    """Batch arrays: rgb (n,3,h,w), depth replicated to (n,3,h,w), gt (n,1,h,w)."""
    rgb = np.stack([s.rgb for s in samples]).astype(np.float32)
    depth = np.stack([s.depth3 for s in samples]).astype(np.float32)
    gt = np.stack([s.gt for s in samples]).astype(np.float32)
    return rgb, depth, gt
