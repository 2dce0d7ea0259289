"""Command-line entry point: ``dmpnet {gen-data,train,infer,eval,gradcheck}``.

Every command prints a reproducibility header to stdout. Failures print one
line to stderr of the form ``dmpnet-error kind=<kind> message=<json string>``
and exit non-zero.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path
from typing import Optional

from dmpnet import __version__, config as config_mod, dmpt, gradcases
from dmpnet import network as net
from dmpnet.dataset import read_split, split_dirs
from dmpnet.gradcheck import DEFAULT_TOL
from dmpnet.kernels import BACKEND
from dmpnet.metrics import evaluate_dir
from dmpnet.netpbm import NetpbmError, save_image
from dmpnet.synth import synth_generate
from dmpnet.train import NonFiniteLoss, infer, train

EXIT_CODES = {"usage": 2, "config": 3, "missing-file": 4, "format": 5, "non-finite": 6, "gradcheck": 7, "error": 1}
LOG_HEADER = "epoch,loss_total,loss_r,loss_g,val_mae"


class CliError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


def header(command: str, cfg: config_mod.RunConfig, seed: int) -> str:
    return f"# dmpnet {__version__} command={command} backend={BACKEND} seed={seed} config_hash={cfg.hash()}"


def _load_config(path, seed: Optional[int]) -> config_mod.RunConfig:
    cfg = config_mod.load(path) if path else config_mod.RunConfig()
    return cfg.with_seed(seed) if seed is not None else cfg


def config_sidecar(checkpoint) -> Path:
    return Path(str(checkpoint) + ".config")


# --------------------------------------------------------------------- commands


def cmd_gen_data(cfg: config_mod.RunConfig, out_dir) -> Path:
    return synth_generate(cfg.synth, Path(out_dir).resolve())


def cmd_train(cfg: config_mod.RunConfig, data_dir, out_checkpoint, log_path=None) -> list:
    """Train on ``data_dir`` and write the checkpoint, its config sidecar and the epoch log."""
    train_dir, test_dir = split_dirs(Path(data_dir).resolve())
    out_checkpoint = Path(out_checkpoint).resolve()
    log_path = Path(log_path).resolve() if log_path else out_checkpoint.with_suffix(".log.csv")
    train_samples = read_split(train_dir)
    val_samples = read_split(test_dir) if test_dir is not None else None
    for s in train_samples[:1]:
        if s.rgb.shape[-1] != cfg.network.input_size or s.rgb.shape[-2] != cfg.network.input_size:
            raise CliError("config", f"training images are {s.rgb.shape[-2]}x{s.rgb.shape[-1]} "
                                     f"but input_size is {cfg.network.input_size}")
    out_checkpoint.parent.mkdir(parents=True, exist_ok=True)
    log_path.parent.mkdir(parents=True, exist_ok=True)
    with open(log_path, "w") as fh:
        fh.write(LOG_HEADER + "\n")

        def on_epoch(entry):
            fh.write(entry.line() + "\n")
            fh.flush()
            print(entry.line(), flush=True)

        params = net.init_params(cfg.network, cfg.train.seed)
        params, logs = train(cfg.network, cfg.train, train_samples, val_samples, params,
                             on_epoch=on_epoch, time_budget=cfg.time_budget)
    dmpt.save_checkpoint(out_checkpoint, {k: v.data for k, v in params.tensors.items()})
    config_sidecar(out_checkpoint).write_text(cfg.dump())
    return logs


def load_model(cfg: Optional[config_mod.RunConfig], checkpoint):
    checkpoint = Path(checkpoint).resolve()
    if not checkpoint.exists():
        raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
    if cfg is None:
        side = config_sidecar(checkpoint)
        cfg = config_mod.load(side) if side.exists() else config_mod.RunConfig()
    params = net.init_params(cfg.network, 0)
    dmpt.assign(params, dmpt.load_checkpoint(checkpoint))
    return cfg, params


def cmd_infer(cfg: Optional[config_mod.RunConfig], checkpoint, data_dir, out_dir) -> list:
    """One 8-bit PGM saliency map per sample, at the input resolution."""
    cfg, params = load_model(cfg, checkpoint)
    root = Path(data_dir).resolve()
    train_dir, test_dir = split_dirs(root)
    split = test_dir if test_dir is not None else train_dir
    samples = read_split(split)
    out = Path(out_dir).resolve()
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for s in samples:
        if s.rgb.shape[-1] != cfg.network.input_size or s.rgb.shape[-2] != cfg.network.input_size:
            raise CliError("format", f"{s.id}: image is {s.rgb.shape[-2]}x{s.rgb.shape[-1]}, "
                                     f"model input_size is {cfg.network.input_size}")
    for s, m in zip(samples, infer(params, cfg.network, samples)):
        path = out / f"{s.id}.pgm"
        save_image(path, m[None])
        written.append(path)
    return written


def cmd_eval(pred_dir, gt_dir, out_report=None):
    """Metrics report; with ``out_report`` writes the table there plus ``.csv`` and ``.pr.csv`` siblings."""
    report = evaluate_dir(Path(pred_dir).resolve(), Path(gt_dir).resolve())
    if out_report:
        out = Path(out_report).resolve()
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(report.to_table())
        out.with_suffix(".csv").write_text("metric,value\n" + report.to_csv())
        out.with_suffix(".pr.csv").write_text(report.pr_csv())
    return report


def cmd_gradcheck(scope: str, seed: int, seeds: int = 1, tol: float = DEFAULT_TOL):
    """Run the named cases at seeds ``seed .. seed + seeds - 1``. Returns (rows, all_passed)."""
    try:
        cases = gradcases.select(scope)
    except KeyError as exc:
        raise CliError("usage", exc.args[0]) from None
    rows = []
    for name, builder in cases.items():
        results = [gradcases.run_case(name, builder, s) for s in range(seed, seed + seeds)]
        worst = max(r.max_rel_error for r in results)
        rows.append((name, worst, sum(r.checked for r in results), sum(r.skipped for r in results), worst <= tol))
    return rows, all(r[-1] for r in rows)


def format_gradcheck(rows, tol: float) -> str:
    width = max([len("case")] + [len(r[0]) for r in rows])
    lines = [f"{'case':<{width}}  {'max_rel_error':>13}  {'checked':>7}  {'skipped':>7}  result"]
    for name, err, checked, skipped, ok in rows:
        lines.append(f"{name:<{width}}  {err:>13.3e}  {checked:>7d}  {skipped:>7d}  {'pass' if ok else 'FAIL'}")
    lines.append(f"tolerance {tol:g}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------- argparse


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value run configuration file")
    common.add_argument("--seed", type=int, help="seed (overrides the config value)")

    p = _Parser(prog="dmpnet", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"dmpnet {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", parents=[common], help="write a synthetic RGB-D dataset")
    g.add_argument("--out", required=True, help="dataset root (train/ and test/ are created)")

    t = sub.add_parser("train", parents=[common], help="train and write a checkpoint")
    t.add_argument("data_dir")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--log", help="epoch log path (default: <checkpoint>.log.csv)")

    i = sub.add_parser("infer", parents=[common], help="write one PGM saliency map per sample")
    i.add_argument("checkpoint")
    i.add_argument("data_dir")
    i.add_argument("--out", required=True, help="output directory")

    e = sub.add_parser("eval", parents=[common], help="score prediction maps against ground truth")
    e.add_argument("pred_dir")
    e.add_argument("gt_dir")
    e.add_argument("--out", help="report path; .csv and .pr.csv siblings are written too")

    c = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient verification")
    c.add_argument("scope", help="all | ops | dmp | end-to-end | <case name>")
    c.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds to check")
    c.add_argument("--tol", type=float, default=DEFAULT_TOL)
    c.add_argument("--out", help="also write the table here")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cmd = args.command
    cfg = _load_config(args.config, args.seed)
    if cmd == "infer" and args.config is None:
        side = config_sidecar(Path(args.checkpoint).resolve())
        cfg = _load_config(side, args.seed) if side.exists() else cfg
    print(header(cmd, cfg, cfg.seed), flush=True)
    if cmd == "gradcheck":
        if args.seeds < 1:
            raise CliError("usage", "--seeds must be >= 1")
        rows, ok = cmd_gradcheck(args.scope, cfg.seed, args.seeds, args.tol)
        table = format_gradcheck(rows, args.tol)
        sys.stdout.write(table)
        if args.out:
            Path(args.out).resolve().write_text(table)
        if not ok:
            failed = [r[0] for r in rows if not r[-1]]
            raise CliError("gradcheck", f"relative error above {args.tol:g} in: {', '.join(failed)}")
        return 0
    if cmd == "eval":
        report = cmd_eval(args.pred_dir, args.gt_dir, args.out)
        sys.stdout.write(report.to_table())
        return 0
    start = time.monotonic()
    if cmd == "gen-data":
        out = cmd_gen_data(cfg, args.out)
        print(f"wrote {cfg.synth.n_train} train / {cfg.synth.n_test} test samples to {out}")
    elif cmd == "train":
        print(LOG_HEADER, flush=True)
        cmd_train(cfg, args.data_dir, args.out, args.log)
        print(f"checkpoint {Path(args.out).resolve()} ({time.monotonic() - start:.1f} s)")
    elif cmd == "infer":
        written = cmd_infer(cfg, args.checkpoint, args.data_dir, args.out)
        print(f"wrote {len(written)} maps to {Path(args.out).resolve()}")
    return 0


def _error_kind(exc: BaseException) -> str:
    if isinstance(exc, CliError):
        return exc.kind
    if isinstance(exc, config_mod.ConfigError):
        return "config"
    if isinstance(exc, FileNotFoundError):
        return "missing-file"
    if isinstance(exc, (dmpt.DmptError, NetpbmError)):
        return "format"
    if isinstance(exc, (NonFiniteLoss, FloatingPointError)):
        return "non-finite"
    return "error"


def main(argv=None) -> int:
    try:
        return run(argv)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except Exception as exc:
        kind = _error_kind(exc)
        message = f"{type(exc).__name__}: {exc}" if kind == "error" else str(exc)
        print(f"dmpnet-error kind={kind} message={json.dumps(message)}", file=sys.stderr)
        return EXIT_CODES[kind]


if __name__ == "__main__":
    sys.exit(main())
