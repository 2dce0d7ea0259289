"""Salient object detection metrics: MAE, max F-measure, S-measure, max E-measure.

Structure- and threshold-based scores (F, S, E) min-max normalize the
prediction first when it has a non-degenerate range; MAE uses raw values.
Thresholds are 256 uniform levels ``k / 255``; a pixel is predicted salient
when ``pred >= threshold``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from dmpnet.netpbm import load_image

EPS = np.finfo(np.float64).eps
BETA2 = 0.3
NUM_THRESHOLDS = 256


def thresholds(count: int = NUM_THRESHOLDS) -> np.ndarray:
    return np.linspace(0.0, 1.0, count)


def _prepare(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} extents differ")
    return pred, gt > 0.5


def normalize(pred: np.ndarray) -> np.ndarray:
    lo, hi = float(pred.min()), float(pred.max())
    if hi - lo > 0:
        return (pred - lo) / (hi - lo)
    return pred


def mae(pred, gt) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} extents differ")
    return float(np.mean(np.abs(pred - gt)))


def f_from_counts(tp, fp, fn, beta2: float = BETA2):
    """Precision, recall and F-measure arrays from confusion counts."""
    tp = np.asarray(tp, dtype=np.float64)
    pred_pos = tp + np.asarray(fp, dtype=np.float64)
    precision = np.divide(tp, pred_pos, out=np.zeros_like(tp), where=pred_pos > 0)
    recall = tp / (tp + np.asarray(fn, dtype=np.float64))
    num = (1 + beta2) * precision * recall
    den = beta2 * precision + recall
    f = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return precision, recall, f


def confusion_counts(pred, gt, levels: Optional[Sequence[float]] = None):
    """TP, FP, FN at each threshold (pred >= t), via sorted search."""
    pred, g = _prepare(pred, gt)
    pred = normalize(pred)
    levels = thresholds() if levels is None else np.asarray(levels, dtype=np.float64)
    pos = np.sort(pred[g])
    neg = np.sort(pred[~g])
    tp = pos.size - np.searchsorted(pos, levels, side="left")
    fp = neg.size - np.searchsorted(neg, levels, side="left")
    fn = pos.size - tp
    return tp, fp, fn


def f_measure_max(pred, gt, beta2: float = BETA2, levels: Optional[Sequence[float]] = None):
    """Maximum F-measure over the threshold grid and the (precision, recall) curve."""
    if not np.any(np.asarray(gt) > 0.5):
        raise ValueError("f-measure: ground truth has no positive pixel, undefined recall")
    tp, fp, fn = confusion_counts(pred, gt, levels)
    precision, recall, f = f_from_counts(tp, fp, fn, beta2)
    return float(f.max()), np.stack([precision, recall], axis=1)


# --------------------------------------------------------------------- S-measure


def _object_score(x: np.ndarray) -> float:
    if x.size == 0:
        return 0.0
    mu = float(x.mean())
    sigma = float(x.std(ddof=1)) if x.size > 1 else 0.0
    return 2 * mu / (mu * mu + 1 + sigma + EPS)


def _s_object(pred, g) -> float:
    fg = np.where(g, pred, 0.0)
    bg = np.where(~g, 1.0 - pred, 0.0)
    u = g.mean()
    return u * _object_score(fg[g]) + (1 - u) * _object_score(bg[~g])


def _round_half_up(v: float) -> int:
    return int(np.floor(v + 0.5))


def _centroid(g) -> tuple:
    """Foreground centroid as 1-based (column, row), rounded half up; image centre if empty."""
    h, w = g.shape
    if not g.any():
        return _round_half_up(w / 2), _round_half_up(h / 2)
    ys, xs = np.nonzero(g)
    return _round_half_up(xs.mean() + 1), _round_half_up(ys.mean() + 1)


def _ssim(pred, gt) -> float:
    n = pred.size
    if n == 0:
        return 0.0
    x = pred.mean()
    y = gt.mean()
    d = max(n - 1, 1)
    sx = ((pred - x) ** 2).sum() / d
    sy = ((gt - y) ** 2).sum() / d
    sxy = ((pred - x) * (gt - y)).sum() / d
    alpha = 4 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return float(alpha / (beta + EPS))
    if beta == 0:
        return 1.0
    return 0.0


def _s_region(pred, g) -> float:
    h, w = g.shape
    x, y = _centroid(g)
    x = min(max(x, 0), w)
    y = min(max(y, 0), h)
    gf = g.astype(np.float64)
    area = h * w
    w1 = x * y / area
    w2 = y * (w - x) / area
    w3 = (h - y) * x / area
    w4 = 1 - w1 - w2 - w3
    quads = [(slice(0, y), slice(0, x)), (slice(0, y), slice(x, w)), (slice(y, h), slice(0, x)), (slice(y, h), slice(x, w))]
    scores = [_ssim(pred[q], gf[q]) for q in quads]
    return float(w1 * scores[0] + w2 * scores[1] + w3 * scores[2] + w4 * scores[3])


def s_measure(pred, gt, alpha: float = 0.5) -> float:
    """Structure measure: alpha * object-aware + (1 - alpha) * region-aware similarity."""
    pred, g = _prepare(pred, gt)
    pred = normalize(pred)
    y = g.mean()
    if y == 0:
        q = 1.0 - pred.mean()
    elif y == 1:
        q = pred.mean()
    else:
        q = alpha * _s_object(pred, g) + (1 - alpha) * _s_region(pred, g)
    return float(min(max(q, 0.0), 1.0))


# --------------------------------------------------------------------- E-measure


def _enhanced_alignment(fm: np.ndarray, g: np.ndarray) -> float:
    gf = g.astype(np.float64)
    if not g.any():
        enhanced = 1.0 - fm
    elif g.all():
        enhanced = fm
    else:
        a_fm = fm - fm.mean()
        a_gt = gf - gf.mean()
        align = 2 * a_gt * a_fm / (a_gt * a_gt + a_fm * a_fm + EPS)
        enhanced = (align + 1) ** 2 / 4
    return float(enhanced.sum() / g.size)


def e_measure_curve(pred, gt, levels: Optional[Sequence[float]] = None) -> np.ndarray:
    pred, g = _prepare(pred, gt)
    pred = normalize(pred)
    levels = thresholds() if levels is None else np.asarray(levels, dtype=np.float64)
    return np.array([_enhanced_alignment((pred >= t).astype(np.float64), g) for t in levels])


def e_measure_max(pred, gt, levels: Optional[Sequence[float]] = None) -> float:
    """Maximum enhanced-alignment score over binarization thresholds."""
    return float(min(max(e_measure_curve(pred, gt, levels).max(), 0.0), 1.0))


# --------------------------------------------------------------------- reports

HEADLINE = ("mae", "max_f", "s_measure", "max_e")


@dataclass
class MetricsReport:
    mae: float
    max_f: float
    s_measure: float
    max_e: float
    count: int = 1
    pr_curve: np.ndarray = field(default_factory=lambda: np.zeros((NUM_THRESHOLDS, 2)))
    threshold_grid: np.ndarray = field(default_factory=thresholds)

    def headline(self) -> dict:
        return {k: getattr(self, k) for k in HEADLINE}

    def to_table(self) -> str:
        rows = [("metric", "value")] + [(k, f"{v:.6f}") for k, v in self.headline().items()]
        rows.append(("images", str(self.count)))
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{a:<{width}}  {b:>10}" for a, b in rows) + "\n"

    def to_csv(self) -> str:
        return "".join(f"{k},{v:.8f}\n" for k, v in self.headline().items())

    def pr_csv(self) -> str:
        lines = ["threshold,precision,recall\n"]
        for t, (p, r) in zip(self.threshold_grid, self.pr_curve):
            lines.append(f"{t:.6f},{p:.8f},{r:.8f}\n")
        return "".join(lines)


def evaluate_pair(pred, gt) -> MetricsReport:
    max_f, pr = f_measure_max(pred, gt)
    return MetricsReport(mae(pred, gt), max_f, s_measure(pred, gt), e_measure_max(pred, gt), 1, pr)


def aggregate(reports: Sequence[MetricsReport]) -> MetricsReport:
    if not reports:
        raise ValueError("no reports to aggregate")
    mean = lambda key: float(np.mean([getattr(r, key) for r in reports]))
    return MetricsReport(
        mae=mean("mae"),
        max_f=mean("max_f"),
        s_measure=mean("s_measure"),
        max_e=mean("max_e"),
        count=len(reports),
        pr_curve=np.mean([r.pr_curve for r in reports], axis=0),
    )


def evaluate_dir(pred_dir, gt_dir) -> MetricsReport:
    """Average per-image metrics over same-named PGM files, in lexicographic order."""
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    gts = sorted(p.name for p in gt_dir.iterdir() if p.suffix == ".pgm")
    if not gts:
        raise FileNotFoundError(f"no .pgm ground-truth files in {gt_dir}")
    reports = []
    for name in gts:
        pp = pred_dir / name
        if not pp.exists():
            raise FileNotFoundError(f"missing prediction for {name} in {pred_dir}")
        pred = load_image(pp)[0]
        gt = load_image(gt_dir / name)[0]
        reports.append(evaluate_pair(pred, gt))
    return aggregate(reports)
