import importlib.util
from pathlib import Path

BENCH = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"


def test_benchmark_runs_on_tiny_inputs(capsys):
    spec = importlib.util.spec_from_file_location("bench_kernels", BENCH)
    bench = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(bench)
    from dmpnet import kernels

    before = {name: getattr(kernels, name) for name in bench.KERNEL_NAMES}
    bench.main(["--repeat", "1", "--size", "16"])
    out = capsys.readouterr().out
    assert "bilinear_bwd" in out and "train_step" in out
    assert all(getattr(kernels, name) is fn for name, fn in before.items())
