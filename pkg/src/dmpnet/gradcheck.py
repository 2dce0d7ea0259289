"""Central finite-difference gradient checking.

All checks run in float64. The scalar probed is ``sum(f(inputs) * R)`` for a
fixed random ``R``, which exercises every output element with distinct
weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from dmpnet import ops
from dmpnet.tensor import Tape, Tensor, backward

DEFAULT_STEP = 1e-4
DEFAULT_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    checked: int
    skipped: int = 0

    def passed(self, tol: float = DEFAULT_TOL) -> bool:
        return bool(self.max_rel_error <= tol)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> np.ndarray:
    """Elementwise |a - n| / max(|a|, |n|, floor)."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def check_gradients(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    seed: int = 0,
    step: float = DEFAULT_STEP,
    names: Optional[Sequence[str]] = None,
    sample: Union[None, int, Sequence[int]] = None,
    skip_kinks: bool = False,
    kink_tol: float = 1e-6,
    one_sided_tol: float = 1e-3,
) -> list[CheckResult]:
    """Compare tape gradients of ``fn(*inputs)`` against central differences.

    Inputs are cast to float64. ``sample`` limits the number of elements
    probed per input (chosen with ``seed``), either one count for all inputs
    or one per input; by default every element is probed.

    With ``skip_kinks`` an element is skipped (and counted) when a relu or
    max-pool switch lies inside ``[x - step, x + step]``, so the difference
    quotient is not a derivative estimate. Two symptoms are tested: the
    central differences at ``step`` and ``step / 10`` disagree (switch inside
    the interval), or the forward and backward one-sided differences disagree
    (switch exactly at ``x``, where the central difference does not depend on
    the step). Smooth functions pass both up to ``O(step)`` terms.
    """
    rng = np.random.default_rng(seed)
    xs = [Tensor(t.data.astype(np.float64), requires_grad=True) for t in inputs]
    names = list(names) if names is not None else [f"input{i}" for i in range(len(xs))]

    with Tape() as tape:
        out = fn(*xs)
    weights = rng.standard_normal(out.shape)
    with tape:
        probe = ops.total(ops.mul(out, weights))
    analytic = backward(probe, tape, leaves=xs)

    def evaluate() -> float:
        return float(np.sum(fn(*xs).data * weights))

    f_zero = evaluate() if skip_kinks else 0.0
    results = []
    counts = sample if isinstance(sample, (list, tuple)) else [sample] * len(xs)
    for name, x, g, count in zip(names, xs, analytic, counts):
        flat = x.data.reshape(-1)
        idx = np.arange(flat.size)
        if count is not None and count < flat.size:
            idx = np.sort(rng.choice(flat.size, size=count, replace=False))
        gflat = g.reshape(-1)
        worst = 0.0
        skipped = 0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            f_plus = evaluate()
            flat[i] = orig - step
            f_minus = evaluate()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2 * step)
            if skip_kinks:
                flat[i] = orig + step / 10
                f_plus = evaluate()
                flat[i] = orig - step / 10
                f_minus = evaluate()
                flat[i] = orig
                fine = (f_plus - f_minus) / (step / 5)
                forward_d = (f_plus - f_zero) / (step / 10)
                backward_d = (f_zero - f_minus) / (step / 10)
                if (relative_error(np.array(numeric), np.array(fine)) > kink_tol
                        or relative_error(np.array(forward_d), np.array(backward_d)) > one_sided_tol):
                    skipped += 1
                    continue
            worst = max(worst, float(relative_error(np.array(gflat[i]), np.array(numeric))))
        results.append(CheckResult(name, worst, len(idx) - skipped, skipped))
    return results
