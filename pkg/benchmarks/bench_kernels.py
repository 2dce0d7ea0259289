"""Compare the compiled and numpy kernel backends.

Times each hot kernel on representative shapes, then a whole training step
with the library's ops rebound to each backend. Usage::

    python3 benchmarks/bench_kernels.py [--repeat N] [--size S]
"""

import argparse
import timeit

import numpy as np

from dmpnet import kernels, network as net
from dmpnet.kernels import get_backend
from dmpnet.optim import Adam
from dmpnet.train import train_step

KERNEL_NAMES = ("im2col", "col2im", "bilinear_fwd", "bilinear_bwd", "maxpool_fwd", "maxpool_bwd")


def kernel_workloads(mod, size: int):
    rng = np.random.default_rng(0)
    c, k = 16, 3
    xp = rng.standard_normal((4, c, size + 2, size + 2)).astype(np.float32)
    cols = mod.im2col(xp, k, k, 1, 1, size, size)
    x = rng.standard_normal((4, c, size, size)).astype(np.float32)
    coords = rng.uniform(-1, size, (4, 9 * size * size, 2)).astype(np.float32)
    gout = rng.standard_normal((4, c, coords.shape[1])).astype(np.float32)
    pooled, arg = mod.maxpool_fwd(xp, 3, 2, size // 2, size // 2)
    gpool = rng.standard_normal(pooled.shape).astype(np.float32)
    return {
        "im2col": lambda: mod.im2col(xp, k, k, 1, 1, size, size),
        "col2im": lambda: mod.col2im(cols, c, size + 2, size + 2, k, k, 1, 1, size, size),
        "bilinear_fwd": lambda: mod.bilinear_fwd(x, coords),
        "bilinear_bwd": lambda: mod.bilinear_bwd(x, coords, gout),
        "maxpool_fwd": lambda: mod.maxpool_fwd(xp, 3, 2, size // 2, size // 2),
        "maxpool_bwd": lambda: mod.maxpool_bwd(gpool, arg, size + 2, size + 2),
    }


def use_backend(mod) -> None:
    """Point the kernel entry points that ops calls at ``mod``."""
    for name in KERNEL_NAMES:
        setattr(kernels, name, getattr(mod, name))


def train_step_timer(size: int):
    cfg = net.NetworkConfig(input_size=size)
    params = net.init_params(cfg, 0)
    opt = Adam(params.values(), lr=1e-4)
    rng = np.random.default_rng(1)
    batch = (rng.uniform(0, 1, (4, 3, size, size)).astype(np.float32),
             rng.uniform(0, 1, (4, 3, size, size)).astype(np.float32),
             (rng.random((4, 1, size, size)) > 0.5).astype(np.float32))
    return lambda: train_step(batch, params, opt, cfg)


def best_of(fn, repeat: int) -> float:
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=int, default=64)
    args = ap.parse_args(argv)

    backends = {"python": get_backend("python")}
    try:
        backends["cython"] = get_backend("cython")
    except ImportError:
        print("compiled backend not built; timing the numpy fallback only")
    original = {name: getattr(kernels, name) for name in KERNEL_NAMES}

    results = {}
    loads = {b: kernel_workloads(m, args.size) for b, m in backends.items()}
    for name in KERNEL_NAMES:
        results[name] = {b: best_of(loads[b][name], args.repeat) for b in backends}
    step_name = f"train_step (batch 4, {args.size}px)"
    results[step_name] = {}
    try:
        for b, mod in backends.items():
            use_backend(mod)
            results[step_name][b] = best_of(train_step_timer(args.size), max(2, args.repeat // 2))
    finally:
        for name, fn in original.items():
            setattr(kernels, name, fn)

    print(f"{'kernel':<28} {'python ms':>10} {'cython ms':>10} {'speedup':>8}")
    for name, times in results.items():
        py, cy = times.get("python"), times.get("cython")
        speed = f"{py / cy:8.1f}" if py and cy else f"{'-':>8}"
        cy_text = f"{cy * 1e3:10.2f}" if cy else f"{'-':>10}"
        print(f"{name:<28} {py * 1e3:10.2f} {cy_text} {speed}")


if __name__ == "__main__":
    main()
