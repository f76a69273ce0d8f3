"""Command-line driver: train, eval, predict, ablate, plots, gradcheck, gen-data.

Every documented failure exits nonzero with a single-line ``error: ...``
diagnostic on stderr. ``--single-thread`` makes runs byte-reproducible
(the wall-seconds TrainLog column is zeroed, since timing is the one
inherently non-deterministic output).
"""

from __future__ import annotations

import argparse
import os
import sys

from . import ablate as AB
from . import config as C
from . import data as D
from . import plots as P
from .checkpoint import load_checkpoint
from .checks import run_all_checks
from .errors import AgegradError, ContractError
from .metrics import full_report, write_predictions_csv, write_report_csv
from .model import model_forward
from .tensor import Tensor
from .train import evaluate_split, run_training


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agegrad", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a model from a config file")
    train.add_argument("--config", required=True, help="key=value config file")
    train.add_argument("--seed", type=int, default=None, help="override train.seed")
    train.add_argument("--out", default="runs/train", help="output directory")
    train.add_argument("--single-thread", action="store_true", help="byte-reproducible mode")

    evalp = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    evalp.add_argument("--checkpoint", required=True)
    evalp.add_argument("--manifest", required=True)
    evalp.add_argument("--split", default="test", choices=["train", "val", "test", "unassigned"])
    evalp.add_argument("--batch-size", type=int, default=32)
    evalp.add_argument("--out", default="runs/eval")

    predict = sub.add_parser("predict", help="print the age estimate for one image")
    predict.add_argument("--checkpoint", required=True)
    predict.add_argument("--image", required=True)

    ablate = sub.add_parser("ablate", help="train every cell of a config grid")
    ablate.add_argument("--config", required=True)
    ablate.add_argument("--preset", choices=sorted(AB.PRESETS), default=None,
                        help="add a built-in grid (linear-layers, head-size, scheduler)")
    ablate.add_argument("--seed", type=int, default=None)
    ablate.add_argument("--out", default="runs/ablate")
    ablate.add_argument("--single-thread", action="store_true")

    plots = sub.add_parser("plots", help="render SVG charts from logs and reports")
    plots.add_argument("--log", action="append", default=[], help="TrainLog CSV (repeatable)")
    plots.add_argument("--report", action="append", default=[], help="MetricsReport CSV (repeatable)")
    plots.add_argument("--out", default="runs/plots")

    gradcheck = sub.add_parser("gradcheck", help="finite-difference check of every layer type")
    gradcheck.add_argument("--step", type=float, default=1e-3)
    gradcheck.add_argument("--tol", type=float, default=1e-3)
    gradcheck.add_argument("--seed", type=int, default=0)

    gen = sub.add_parser("gen-data", help="generate the synthetic age dataset")
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.add_argument("--style", choices=["standard", "alt"], default="standard",
                     help="alt draws a second distribution for pretraining")
    return parser


def _cmd_train(args) -> int:
    overrides = {"train.seed": str(args.seed)} if args.seed is not None else None
    cfg, _ = C.load_config(args.config, overrides)
    result = run_training(cfg, args.out, single_thread=args.single_thread)
    print(f"best val MAE {result.best_val_mae:.4f} at epoch {result.best_epoch}")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"trainlog:   {result.log_path}")
    return 0


def _cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    manifest = D.load_manifest(args.manifest)
    records = manifest.of_split(args.split)
    if not records:
        raise ContractError(f"split {args.split!r} of {args.manifest} is empty")
    preds, targets = evaluate_split(ckpt.spec, ckpt.params, manifest, args.split, args.batch_size)
    report = full_report(preds, targets)
    os.makedirs(args.out, exist_ok=True)
    report_path = os.path.join(args.out, "metrics.csv")
    write_report_csv(report_path, report)
    write_predictions_csv(
        os.path.join(args.out, "predictions.csv"), [r.path for r in records], targets, preds
    )
    print(f"MAE {report.mae:.4f}  CS@5 {report.cs[5.0]:.2f}%  AUC {report.auc:.4f}")
    print(f"report: {report_path}")
    return 0


def _cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    try:
        image = D.read_image(args.image)
    except OSError as exc:
        raise AgegradError(str(exc)) from None
    arr = D.to_input_array(D.resize_image(image, ckpt.spec.input_size))
    out = model_forward(Tensor(arr[None]), ckpt.spec, ckpt.params)
    print(f"{out.item():.3f}")
    return 0


def _cmd_ablate(args) -> int:
    overrides = {"train.seed": str(args.seed)} if args.seed is not None else None
    cfg, grid_values = C.load_config(args.config, overrides)
    if args.preset:
        preset = dict(AB.PRESETS[args.preset])
        grid_assignments = {k: v for k, v in preset.items() if "|" in v}
        C.apply_values(cfg, {k: v for k, v in preset.items() if "|" not in v})
        grid_values = {**grid_values, **grid_assignments}
    grid = AB.parse_grid(grid_values)
    results = AB.run_ablation(cfg, grid, args.out, single_thread=args.single_thread)
    failures = sum(1 for r in results if r.error)
    for r in results:
        cell = " ".join(f"{k}={v}" for k, v in r.overrides.items())
        if r.error:
            print(f"{cell}: FAILED ({r.error})")
        else:
            print(f"{cell}: best_val_mae={r.best_val_mae:.4f} test_mae={r.test_mae:.4f}")
    print(f"table: {os.path.join(args.out, AB.RESULTS_NAME)}")
    return 1 if failures == len(results) else 0


def _cmd_plots(args) -> int:
    if not args.log and not args.report:
        raise ContractError("plots needs at least one --log or --report")
    os.makedirs(args.out, exist_ok=True)
    if args.log:
        P.plot_train_logs(args.log, os.path.join(args.out, "training_loss.svg"))
        print(os.path.join(args.out, "training_loss.svg"))
    if args.report:
        P.plot_reports(args.report, os.path.join(args.out, "error_cdf.svg"))
        print(os.path.join(args.out, "error_cdf.svg"))
    return 0


def _cmd_gradcheck(args) -> int:
    results = run_all_checks(step=args.step, tol=args.tol, seed=args.seed)
    worst = 0
    for r in results:
        status = "ok" if r.report.passed else "FAIL"
        print(
            f"{status:4s} {r.name:22s} max_abs={r.report.max_abs_err:.3e} "
            f"max_rel={r.report.max_rel_err:.3e} checked={r.report.checked}"
        )
        worst = max(worst, 0 if r.report.passed else 1)
    total = sum(r.seconds for r in results)
    print(f"{'PASS' if worst == 0 else 'FAIL'}: {len(results)} checks in {total:.1f}s")
    return worst


def _cmd_gen_data(args) -> int:
    manifest = D.gen_synthetic(args.n, args.seed, args.out, style=args.style)
    print(f"{len(manifest.records)} images -> {os.path.join(args.out, D.MANIFEST_NAME)}")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "predict": _cmd_predict,
    "ablate": _cmd_ablate,
    "plots": _cmd_plots,
    "gradcheck": _cmd_gradcheck,
    "gen-data": _cmd_gen_data,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except AgegradError as exc:
        print(f"error: {type(exc).__name__}: {str(exc).splitlines()[0]}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: OSError: {str(exc).splitlines()[0]}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
