"""``streamsvm`` command line: synth, train, stream, resume, evaluate, gridsearch, curve.

Exit codes: 0 success, 2 usage or configuration error, 3 data or file
error, 4 non-convergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import replace
from importlib import resources
from pathlib import Path

from .checkpoint import Checkpoint, load_checkpoint, load_model, save_checkpoint, save_model
from .data import PipeScanConfig, SplitSpec, generate_pipe_scan, load_dataset, split, write_sparse_text
from .errors import (CheckpointError, ConfigurationError, DataError, InvalidParameterError,
                     NonConvergenceError, StreamSvmError)
from .evaluation import (CURVE_HEADER, GRID_HEADER, GRID_ITERATION_BUDGET, GridSpec, evaluate, grid_csv_rows,
                         grid_search, learning_curve, write_csv)
from .kernel import KernelSpec
from .trainers import ALGORITHMS, TrainerConfig, advance, fit

log = logging.getLogger("streamsvm")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NONCONVERGENCE = 0, 2, 3, 4
METRICS_HEADER = ["split", "n_samples", "accuracy", "log_loss", "roc_auc", "f1", "support_size"]


class UsageError(Exception):
    pass


# -- argument parsing -------------------------------------------------------------------


def _add_data(p):
    p.add_argument("--data", required=True, help="sparse text or .csv dataset")
    p.add_argument("--remap01", action="store_true", help="read 0/1 labels as -1/+1")


def _add_split(p):
    p.add_argument("--train-fraction", type=float, default=0.3,
                   help="share of samples in the training pool; the rest is the test set")
    p.add_argument("--validation-fraction", type=float, default=0.2,
                   help="share of the training pool held out for validation")


def _add_trainer(p, algos=ALGORITHMS, default="lasvm"):
    p.add_argument("--algo", choices=algos, default=default)
    p.add_argument("--C", type=float, default=100.0)
    p.add_argument("--kernel", default="rbf",
                   help="kernel name or full spec such as 'poly?gamma=1&degree=3&coef0=1'")
    p.add_argument("--gamma", default=None, help="'auto' or a positive number")
    p.add_argument("--degree", type=int, default=None)
    p.add_argument("--coef0", type=float, default=None)
    p.add_argument("--tau", type=float, default=0.01)
    p.add_argument("--epoch-size", type=int, default=200)
    p.add_argument("--finish-every", type=int, default=5, help="epochs between finishing steps")
    p.add_argument("--smo-tolerance", type=float, default=1e-3)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streamsvm", description="Streaming kernel SVM training and benchmarking.")
    parser.add_argument("--seed", type=int, default=0, help="drives every random choice")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic pipe-scan dataset")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--beams", type=int, default=180)
    p.add_argument("--radius", type=float, default=100.0)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--defect-rate", type=float, default=0.3)
    p.add_argument("--depth-min", type=float, default=1.0)
    p.add_argument("--depth-max", type=float, default=5.0)
    p.add_argument("--width-min", type=int, default=4)
    p.add_argument("--width-max", type=int, default=20)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train on the training split and report metrics")
    _add_data(p)
    _add_split(p)
    _add_trainer(p)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("stream", help="online training with periodic checkpoints")
    _add_data(p)
    _add_split(p)
    _add_trainer(p, ("isvm", "lasvm"))
    p.add_argument("--checkpoint-every", type=int, default=0, help="samples between checkpoints (0 = never)")
    p.add_argument("--checkpoint", default=None, help="checkpoint path (default OUT/checkpoint.ssvm)")
    p.add_argument("--stop-after", type=int, default=None, help="stop after this many samples")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("resume", help="continue a stream run from a checkpoint")
    p.add_argument("--from", dest="source", required=True)
    p.add_argument("--data", default=None, help="override the dataset path recorded in the checkpoint")
    p.add_argument("--out", default=None)
    p.add_argument("--stop-after", type=int, default=None)

    p = sub.add_parser("evaluate", help="score a saved model on a dataset")
    p.add_argument("--model", required=True)
    _add_data(p)
    p.add_argument("--out", default=None, help="metrics CSV path (default: standard output)")

    p = sub.add_parser("gridsearch", help="k-fold grid search")
    _add_data(p)
    p.add_argument("--grid", default="smoke", help="grid JSON file or a bundled name (smoke, full)")
    p.add_argument("--algo", choices=ALGORITHMS, default="lasvm")
    p.add_argument("--folds", type=int, default=None, help="override the grid's fold count")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--epoch-size", type=int, default=200)
    p.add_argument("--finish-every", type=int, default=5)
    p.add_argument("--iteration-budget", type=int, default=GRID_ITERATION_BUDGET,
                   help="solver iterations allowed per training sample before a fit counts as failed")
    p.add_argument("--out", required=True, help="grid CSV path")

    p = sub.add_parser("curve", help="learning curves as CSV plus PNG figures")
    _add_data(p)
    _add_split(p)
    _add_trainer(p, ALGORITHMS)
    p.add_argument("--algos", default=None, help="comma list overriding --algo, e.g. isvm,lasvm,smo")
    p.add_argument("--checkpoints", required=True, help="comma-separated increasing sample counts")
    p.add_argument("--out", required=True, help="curve CSV path")
    p.add_argument("--no-plot", action="store_true")
    return parser


# -- helpers -------------------------------------------------------------------------


def _kernel_from_args(args) -> KernelSpec:
    text = args.kernel
    spec = KernelSpec.from_text(text) if "?" in text else KernelSpec(text)
    changes = {}
    if args.gamma is not None:
        changes["gamma"] = args.gamma if args.gamma == "auto" else float(args.gamma)
    if args.degree is not None:
        changes["degree"] = args.degree
    if args.coef0 is not None:
        changes["coef0"] = args.coef0
    return replace(spec, **changes)


def _trainer_from_args(args, algo=None) -> TrainerConfig:
    return TrainerConfig(algo or args.algo, args.C, _kernel_from_args(args), args.tau, args.epoch_size,
                         args.finish_every, args.seed, smo_tolerance=args.smo_tolerance)


def _fingerprint(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _splits(args, data_path=None):
    dataset = load_dataset(data_path or args.data, args.remap01)
    spec = SplitSpec(args.train_fraction, args.validation_fraction, args.seed)
    return split(dataset, spec)


def _metrics_rows(model, support_size, named_sets):
    rows = []
    for name, ds in named_sets:
        if ds is None or len(ds) == 0:
            continue
        m = evaluate(model, ds, strict=False)
        rows.append([name, len(ds), repr(m.accuracy), repr(m.log_loss), repr(m.roc_auc), repr(m.f1),
                     support_size])
    return rows


def _write_timing(out_dir: Path, payload: dict):
    (out_dir / "timing.json").write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def _grid_path(name: str) -> Path:
    path = Path(name)
    if path.exists():
        return path
    bundled = resources.files("streamsvm.grids") / f"{name}.json"
    if bundled.is_file():
        return Path(str(bundled))
    raise UsageError(f"grid {name!r} is neither a file nor a bundled grid")


def _parse_checkpoints(text) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--checkpoints must be comma-separated integers, got {text!r}") from None


# -- subcommands ---------------------------------------------------------------------------


def cmd_synth(args):
    config = PipeScanConfig(args.n, args.beams, args.radius, args.noise, args.defect_rate,
                            (args.depth_min, args.depth_max), (args.width_min, args.width_max), args.seed)
    write_sparse_text(generate_pipe_scan(config), args.out)
    print(f"wrote {args.n} samples to {args.out}")


def cmd_train(args):
    train, valid, test = _splits(args)
    config = _trainer_from_args(args)
    t0 = time.perf_counter()
    model = fit(config, train)
    seconds = time.perf_counter() - t0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "model.json")
    write_csv(out / "metrics.csv", METRICS_HEADER,
              _metrics_rows(model, model.n_support, [("validation", valid), ("test", test)]))
    _write_timing(out, {"algo": config.algo, "train_seconds": seconds, "n_train": len(train)})
    print(f"{config.algo}: trained on {len(train)} samples in {seconds:.2f}s, {model.n_support} support vectors")


def _stream_meta(args, config, checkpoint_path, out):
    return {
        "algo": config.algo, "C": config.C, "kernel": config.kernel.to_text(), "tau": config.tau,
        "epoch_size": config.epoch_size, "finish_every": config.finish_every, "seed": args.seed,
        "data": str(Path(args.data).resolve()), "data_sha256": _fingerprint(args.data),
        "remap01": bool(args.remap01), "train_fraction": args.train_fraction,
        "validation_fraction": args.validation_fraction, "checkpoint_every": args.checkpoint_every,
        "checkpoint": str(checkpoint_path), "out": str(out),
    }


def _run_stream(ckpt: Checkpoint, train, valid, test, stop_after=None):
    meta = ckpt.meta
    config = TrainerConfig(meta["algo"], meta["C"], KernelSpec.from_text(meta["kernel"]), meta["tau"],
                           meta["epoch_size"], meta["finish_every"], meta["seed"])
    schedule = config.schedule
    total = len(train)
    end = total if stop_after is None else min(total, stop_after)
    every = meta["checkpoint_every"]
    path = Path(meta["checkpoint"])
    out = Path(meta["out"])
    t0 = time.perf_counter()
    while ckpt.position < end:
        target = end if not every else min(end, (ckpt.position // every + 1) * every)
        ckpt.position = advance(ckpt.state, train, schedule, ckpt.position, target)
        if every and (ckpt.position % every == 0 or ckpt.position == end):
            save_checkpoint(ckpt, path)
    seconds = time.perf_counter() - t0
    if ckpt.position < total:
        save_checkpoint(ckpt, path)
        print(f"stopped at {ckpt.position}/{total} samples; checkpoint at {path}")
        return
    model = ckpt.state.to_model()
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "model.json")
    support = len(ckpt.state.support) if config.algo == "isvm" else ckpt.state.n
    write_csv(out / "metrics.csv", METRICS_HEADER,
              _metrics_rows(model, support, [("validation", valid), ("test", test)]))
    _write_timing(out, {"algo": config.algo, "segment_seconds": seconds, "n_train": total})
    print(f"{config.algo}: consumed {total} samples, {model.n_support} support vectors")


def cmd_stream(args):
    config = _trainer_from_args(args)
    if args.checkpoint_every < 0:
        raise UsageError("--checkpoint-every must be >= 0")
    out = Path(args.out)
    checkpoint_path = Path(args.checkpoint) if args.checkpoint else out / "checkpoint.ssvm"
    train, valid, test = _splits(args)
    ckpt = Checkpoint(config.new_state(), 0, _stream_meta(args, config, checkpoint_path, out))
    _run_stream(ckpt, train, valid, test, args.stop_after)


def cmd_resume(args):
    ckpt = load_checkpoint(args.source)
    meta = ckpt.meta
    data_path = args.data or meta["data"]
    if _fingerprint(data_path) != meta["data_sha256"]:
        raise DataError(f"{data_path} differs from the dataset the checkpoint was trained on")
    if args.out:
        meta["out"] = str(Path(args.out))
    dataset = load_dataset(data_path, meta["remap01"])
    train, valid, test = split(dataset, SplitSpec(meta["train_fraction"], meta["validation_fraction"], meta["seed"]))
    _run_stream(ckpt, train, valid, test, args.stop_after)


def cmd_evaluate(args):
    model = load_model(args.model)
    dataset = load_dataset(args.data, args.remap01)
    rows = _metrics_rows(model, model.n_support, [("data", dataset)])
    if args.out:
        write_csv(args.out, METRICS_HEADER, rows)
    else:
        print(",".join(METRICS_HEADER))
        for row in rows:
            print(",".join(str(v) for v in row))


def cmd_gridsearch(args):
    grid = GridSpec.load(_grid_path(args.grid))
    if args.folds is not None:
        grid = GridSpec(grid.C_values, grid.kernel_kinds, grid.gamma_values, grid.tau_values, args.folds,
                        grid.degree, grid.coef0)
    dataset = load_dataset(args.data, args.remap01)
    t0 = time.perf_counter()
    result = grid_search(dataset, grid, args.algo, args.seed, args.jobs,
                         epoch_size=args.epoch_size, finish_every=args.finish_every,
                         iteration_budget=args.iteration_budget)
    seconds = time.perf_counter() - t0
    write_csv(args.out, GRID_HEADER, grid_csv_rows(result))
    failed = sum(r.failed for r in result.rows)
    if result.best is None:
        raise NonConvergenceError("every grid point failed")
    best = result.best
    print(f"{len(result.rows)} configs ({failed} failed) in {seconds:.1f}s; best #{best.config_id}: "
          f"C={best.config.C} kernel={best.config.kernel.to_text()}"
          + (f" tau={best.config.tau}" if args.algo == "lasvm" else "")
          + f" mean_val_acc={best.mean:.4f}")


def cmd_curve(args):
    algos = [a.strip() for a in args.algos.split(",")] if args.algos else [args.algo]
    bad = [a for a in algos if a not in ALGORITHMS]
    if bad:
        raise UsageError(f"unknown algorithm(s) {bad}")
    checkpoints = _parse_checkpoints(args.checkpoints)
    train, valid, test = _splits(args)
    out = Path(args.out)
    curves = {}
    for algo in algos:
        points = learning_curve(_trainer_from_args(args, algo), train, valid, test, checkpoints)
        curves[algo] = points
        path = out if len(algos) == 1 else out.with_name(f"{out.stem}-{algo}{out.suffix or '.csv'}")
        write_csv(path, CURVE_HEADER, [p.csv_row() for p in points])
        print(f"{algo}: wrote {len(points)} points to {path}")
    if not args.no_plot:
        from .plotting import plot_curves

        for png in plot_curves(curves, out.with_suffix("")):
            print(f"figure: {png}")


COMMANDS = {
    "synth": cmd_synth, "train": cmd_train, "stream": cmd_stream, "resume": cmd_resume,
    "evaluate": cmd_evaluate, "gridsearch": cmd_gridsearch, "curve": cmd_curve,
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.diagnostics:
            print(f"diagnostics: {exc.diagnostics}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (UsageError, ConfigurationError, InvalidParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, OSError, StreamSvmError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
