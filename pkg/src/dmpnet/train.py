"""Training loop, augmentation and inference."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from dmpnet import network as net
from dmpnet.dataset import Sample, stack
from dmpnet.metrics import mae
from dmpnet.ops import interp_matrix
from dmpnet.optim import DEFAULT_LR, DEFAULT_WEIGHT_DECAY, Adam
from dmpnet.tensor import Tape, Tensor, backward

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = DEFAULT_LR
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 45
    batch_size: int = 1
    seed: int = 0
    augment: bool = True
    crop_jitter: float = 0.1

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


class NonFiniteLoss(FloatingPointError):
    pass


def augment(rng: np.random.Generator, rgb: np.ndarray, depth: np.ndarray, gt: np.ndarray, jitter: float = 0.1):
    """Random horizontal flip and a random crop (up to ``jitter`` of the side) resized back."""
    rgb, depth, gt = rgb.copy(), depth.copy(), gt.copy()
    size = rgb.shape[-1]
    for i in range(rgb.shape[0]):
        if rng.random() < 0.5:
            rgb[i], depth[i], gt[i] = rgb[i, ..., ::-1], depth[i, ..., ::-1], gt[i, ..., ::-1]
        crop = int(round(size * (1 - rng.uniform(0, jitter))))
        if crop < size:
            y0, x0 = rng.integers(0, size - crop + 1, size=2)
            m = interp_matrix(size, crop, np.float32)

            def resample(a):
                return m @ a[..., y0 : y0 + crop, x0 : x0 + crop] @ m.T

            rgb[i] = resample(rgb[i])
            depth[i] = resample(depth[i])
            gt[i] = (resample(gt[i]) >= 0.5).astype(np.float32)
    return rgb, depth, gt


def compute_loss(params: net.NetworkParams, cfg: net.NetworkConfig, rgb, depth, gt):
    out = net.forward(Tensor(rgb), Tensor(depth), params, cfg)
    return net.loss_total(out["s_f"], out["s_r"], out["s_d"], gt, cfg.lambda_mode)


def train_step(batch, params: net.NetworkParams, opt: Adam, cfg: net.NetworkConfig):
    """Forward, loss, backward and one Adam update. Returns (total, refined, global) loss values."""
    rgb, depth, gt = batch
    with Tape() as tape:
        total, l_r, l_g = compute_loss(params, cfg, rgb, depth, gt)
    value = float(total.data)
    if not np.isfinite(value):
        raise NonFiniteLoss(
            f"non-finite training loss {value} (refined={float(l_r.data)}, global={float(l_g.data)})"
        )
    grads = backward(total, tape, leaves=opt.params)
    opt.step(grads)
    bad = [p.name for p in opt.params if not np.isfinite(p.data).all()]
    if bad:
        raise NonFiniteLoss(f"update diverged after loss {value}: non-finite values in {', '.join(bad[:5])}")
    return value, float(l_r.data), float(l_g.data)


def infer(params: net.NetworkParams, cfg: net.NetworkConfig, samples: Sequence[Sample], batch_size: int = 16) -> list:
    """Refined saliency maps (h, w) for each sample."""
    maps = []
    for i in range(0, len(samples), batch_size):
        rgb, depth, _ = stack(samples[i : i + batch_size])
        out = net.forward(Tensor(rgb), Tensor(depth), params, cfg)
        maps.extend(out["s_f"].data[:, 0])
    return maps


def evaluate_mae(params, cfg, samples: Sequence[Sample]) -> float:
    maps = infer(params, cfg, samples)
    return float(np.mean([mae(m, s.gt[0]) for m, s in zip(maps, samples)]))


@dataclass
class EpochLog:
    epoch: int
    loss_total: float
    loss_r: float
    loss_g: float
    val_mae: float

    def line(self) -> str:
        return f"{self.epoch},{self.loss_total:.6f},{self.loss_r:.6f},{self.loss_g:.6f},{self.val_mae:.6f}"


def train(
    cfg: net.NetworkConfig,
    tcfg: TrainConfig,
    train_samples: Sequence[Sample],
    val_samples: Optional[Sequence[Sample]] = None,
    params: Optional[net.NetworkParams] = None,
    on_epoch: Optional[Callable[[EpochLog], None]] = None,
    time_budget: float = 0.0,
):
    """Train from ``tcfg.seed``; deterministic for fixed inputs. Returns (params, epoch logs).

    A positive ``time_budget`` (seconds) stops training after the first epoch
    that ends past the budget.
    """
    start_time = time.monotonic()
    params = params if params is not None else net.init_params(cfg, tcfg.seed)
    opt = Adam(params.values(), lr=tcfg.lr, weight_decay=tcfg.weight_decay,
               betas=(tcfg.beta1, tcfg.beta2), eps=tcfg.eps)
    rng = np.random.default_rng(np.random.SeedSequence([tcfg.seed, 1]))
    rgb_all, depth_all, gt_all = stack(train_samples) if train_samples else (None, None, None)
    logs = []
    for epoch in range(1, tcfg.epochs + 1):
        order = rng.permutation(len(train_samples))
        sums = np.zeros(3)
        for start in range(0, len(order), tcfg.batch_size):
            idx = order[start : start + tcfg.batch_size]
            batch = rgb_all[idx], depth_all[idx], gt_all[idx]
            if tcfg.augment:
                batch = augment(rng, *batch, jitter=tcfg.crop_jitter)
            sums += train_step(batch, params, opt, cfg)
        sums /= max(len(order), 1)
        val = evaluate_mae(params, cfg, val_samples) if val_samples else float("nan")
        entry = EpochLog(epoch, *sums, val)
        logs.append(entry)
        log.info("epoch %d loss %.4f val_mae %.4f", epoch, entry.loss_total, val)
        if on_epoch is not None:
            on_epoch(entry)
        if time_budget > 0 and time.monotonic() - start_time > time_budget:
            log.warning("time budget of %.0f s reached after epoch %d", time_budget, epoch)
            break
    return params, logs
