"""Command line: synth, train, eval, gradcheck, sweep, schedule.

Exit status: 0 success, 2 usage / configuration, 3 data, 4 numerical,
5 failed check.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import gradients
from .data import SynthSpec, generate_synthetic, load_dataset, save_dataset
from .evaluation import evaluate_model
from .exceptions import CheckFailure, RankedListError, UsageError
from .pipeline import TrainConfig, load_checkpoint, save_checkpoint, train
from .rll import TemperatureSchedule, schedule_temperature

# loss-specific flags each loss accepts; anything else given explicitly is a usage error
LOSS_FLAGS = {
    "rll": {"alpha", "m", "tn", "tp", "lam", "t1", "t2"},
    "rll-simpler": {"m", "tn", "t1", "t2"},
    "triplet": {"m"},
    "lifted": {"alpha"},
    "npair": set(),
    "proxy-nca": set(),
}
SWEEP_AXES = {"alpha": "alpha", "tn": "t_n", "tp": "t_p", "m": "margin", "batch-content": None, "embed-dim": "output_dim"}
AXIS_FLAG = {"alpha": "alpha", "tn": "tn", "tp": "tp", "m": "m"}


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_loss_flags(p, default_loss):
    p.add_argument("--loss", choices=sorted(LOSS_FLAGS), default=default_loss)
    p.add_argument("--alpha", type=float, help="negative boundary (rll, lifted)")
    p.add_argument("--m", type=float, help="margin (rll, rll-simpler, triplet)")
    p.add_argument("--tn", type=float, help="negative weighting temperature")
    p.add_argument("--tp", type=float, help="positive weighting temperature (rll)")
    p.add_argument("--lambda", dest="lam", type=float, help="negative-term weight (rll)")
    p.add_argument("--t1", type=float, help="initial negative temperature of a linear schedule")
    p.add_argument("--t2", type=float, help="final negative temperature of a linear schedule")


def _add_train_flags(p):
    p.add_argument("--classes", type=int, default=8, help="classes per batch (C)")
    p.add_argument("--per-class", type=int, default=3, help="points per class in a batch (K)")
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=2e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--embed-dim", type=int, default=8)
    p.add_argument("--arch", choices=("linear", "mlp"), default="linear")
    p.add_argument("--hidden", type=int, default=64)


def build_parser():
    parser = argparse.ArgumentParser(prog="rankedlist", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the Gaussian-cluster benchmark")
    p.add_argument("--classes", type=int, default=10, help="training classes")
    p.add_argument("--test-classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--signal-dim", type=int, default=8)
    p.add_argument("--sep", type=float, default=4.0)
    p.add_argument("--no-mixing", action="store_true")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True, help="output directory for train.csv and test.csv")

    p = sub.add_parser("train", help="train an embedding model")
    _add_loss_flags(p, "rll-simpler")
    _add_train_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="loss log path (default: <out>.loss.csv)")

    p = sub.add_parser("eval", help="Recall@K of a checkpoint on a test file")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--ks", type=_int_list, default=[1, 2, 4, 8])
    p.add_argument("--report", help="machine-readable JSON report path")

    p = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    p.add_argument("--loss", choices=sorted(LOSS_FLAGS) + ["all"], default="all")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--step", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=3)
    p.add_argument("--report", help="machine-readable JSON report path")

    p = sub.add_parser("sweep", help="train and evaluate once per value of one hyperparameter")
    p.add_argument("--axis", required=True, help=f"one of {', '.join(SWEEP_AXES)}")
    p.add_argument("--values", required=True, help="comma-separated values; batch-content uses CxK items")
    _add_loss_flags(p, "rll")
    _add_train_flags(p)
    p.add_argument("--data", help="training file (default: generate the default benchmark)")
    p.add_argument("--test", help="test file (required with --data)")
    p.add_argument("--ks", type=_int_list, default=[1, 2, 4, 8])
    p.add_argument("--report", help="machine-readable JSON report path")

    p = sub.add_parser("schedule", help="print the linear negative-temperature schedule")
    p.add_argument("--t1", type=float, required=True)
    p.add_argument("--t2", type=float, required=True)
    p.add_argument("--max-iter", type=int, required=True)
    p.add_argument("--at", type=_int_list, required=True, help="comma-separated iterations")
    return parser


def echo_config(args, out):
    resolved = {k: v for k, v in sorted(vars(args).items())}
    out.write("# configuration\n")
    for key, value in resolved.items():
        out.write(f"#   {key} = {json.dumps(value)}\n")


def train_config_from_args(args, overrides=None):
    given = {flag for flag in ("alpha", "m", "tn", "tp", "lam", "t1", "t2") if getattr(args, flag) is not None}
    given |= set(overrides or ())
    extra = given - LOSS_FLAGS[args.loss]
    if extra:
        flags = ", ".join("--" + ("lambda" if f == "lam" else f) for f in sorted(extra))
        raise UsageError(f"{flags} not accepted with --loss {args.loss}")
    kwargs = dict(
        loss=args.loss,
        learning_rate=args.lr,
        momentum=args.momentum,
        weight_decay=args.weight_decay,
        max_iter=args.iters,
        batch_classes=args.classes,
        batch_per_class=args.per_class,
        seed=args.seed,
        output_dim=args.embed_dim,
        architecture=args.arch,
        hidden_dim=args.hidden,
        t1=args.t1,
        t2=args.t2,
    )
    if args.alpha is not None:
        kwargs["alpha"] = args.alpha
    if args.m is not None:
        kwargs["margin"] = args.m
    if args.tn is not None:
        kwargs["t_n"] = args.tn
    if args.tp is not None:
        kwargs["t_p"] = args.tp
    if args.lam is not None:
        kwargs["lam"] = args.lam
    return TrainConfig(**kwargs)


def cmd_synth(args, out):
    spec = SynthSpec(
        n_train_classes=args.classes,
        n_test_classes=args.test_classes,
        per_class=args.per_class,
        input_dim=args.dim,
        separation=args.sep,
        mixing=not args.no_mixing,
        seed=args.seed,
        signal_dim=args.signal_dim,
    )
    train_set, test_set = generate_synthetic(spec)
    directory = Path(args.out)
    directory.mkdir(parents=True, exist_ok=True)
    for ds, name in ((train_set, "train.csv"), (test_set, "test.csv")):
        path = save_dataset(ds, directory / name)
        out.write(f"wrote {path} ({len(ds)} points, {ds.n_classes} classes, dim {ds.dim})\n")
    return 0


def cmd_train(args, out):
    config = train_config_from_args(args)
    dataset = load_dataset(args.data)
    every = max(1, config.max_iter // 10)

    def progress(it, loss):
        if (it + 1) % every == 0 or it == 0:
            out.write(f"iter {it + 1:>6d}  loss {loss:.6f}\n")

    result = train(dataset, config, callback=progress)
    save_checkpoint(args.out, result.model, config)
    log = Path(args.log or f"{args.out}.loss.csv")
    lines = ["iter,loss,t_n"]
    for it, (loss, t) in enumerate(zip(result.loss_history, result.temperature_history)):
        lines.append(f"{it},{loss:.9g},{'' if np.isnan(t) else format(t, '.9g')}")
    log.write_text("\n".join(lines) + "\n", encoding="utf-8")
    if config.schedule is not None and config.max_iter:
        temps = result.temperature_history
        out.write(f"t_n schedule: first {temps[0]:.6g}, last {temps[-1]:.6g}\n")
    out.write(f"wrote {args.out} and {log}\n")
    return 0


def cmd_eval(args, out):
    model, _ = load_checkpoint(args.model)
    dataset = load_dataset(args.data)
    report = evaluate_model(model, dataset, args.ks)
    out.write(report.to_text())
    if args.report:
        Path(args.report).write_text(report.to_json(), encoding="utf-8")
    return 0


def cmd_gradcheck(args, out):
    losses = sorted(LOSS_FLAGS) if args.loss == "all" else [args.loss]
    summary, failed = {}, []
    for loss_id in losses:
        trials = gradients.run_gradcheck(loss_id, args.trials, args.tol, args.seed, args.step)
        worst = max(trials, key=lambda t: t.report.max_relative_error)
        ok = all(t.report.passed for t in trials)
        summary[loss_id] = {
            "passed": ok,
            "trials": len(trials),
            "max_relative_error": worst.report.max_relative_error,
            "worst_trial": worst.trial,
            "worst_coordinate": list(worst.report.worst_index or ()),
            "excluded_coordinates": sum(t.report.excluded for t in trials),
        }
        status = "PASS" if ok else "FAIL"
        out.write(f"{loss_id:<12} {status}  max rel err {worst.report.max_relative_error:.3e} over {len(trials)} trials\n")
        if not ok:
            failed.append(loss_id)
            out.write(
                f"  worst: trial {worst.trial} coordinate {worst.report.worst_index} "
                f"(C={worst.n_classes}, K={worst.per_class}, D={worst.dim}, params={worst.params})\n"
            )
    if args.report:
        Path(args.report).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if failed:
        raise CheckFailure(f"gradient check failed for {', '.join(failed)} at tolerance {args.tol:g}")
    return 0


def _sweep_points(args):
    if args.axis not in SWEEP_AXES:
        raise UsageError(f"unknown sweep axis {args.axis!r}; choose from {', '.join(SWEEP_AXES)}")
    items = [v.strip() for v in args.values.split(",") if v.strip()]
    if not items:
        raise UsageError("--values is empty")
    points = []
    for item in items:
        try:
            if args.axis == "batch-content":
                c, k = item.lower().split("x")
                points.append((item, {"batch_classes": int(c), "batch_per_class": int(k)}))
            elif args.axis == "embed-dim":
                points.append((item, {"output_dim": int(item)}))
            else:
                points.append((item, {SWEEP_AXES[args.axis]: float(item)}))
        except ValueError:
            raise UsageError(f"bad value {item!r} for axis {args.axis}") from None
    return points


def cmd_sweep(args, out):
    points = _sweep_points(args)
    overrides = {AXIS_FLAG[args.axis]} if args.axis in AXIS_FLAG else set()
    base = train_config_from_args(args, overrides)
    if args.data:
        if not args.test:
            raise UsageError("--test is required with --data")
        train_set, test_set = load_dataset(args.data), load_dataset(args.test)
    else:
        train_set, test_set = generate_synthetic(SynthSpec())
    rows = []
    for label, change in points:
        config = TrainConfig.from_dict({**base.to_dict(), **change})
        result = train(train_set, config)
        report = evaluate_model(result.model, test_set, args.ks)
        rows.append({"value": label, **report.as_dict()})
    keys = [f"recall@{k}" for k in sorted(args.ks)]
    out.write(f"{args.axis:>14}  " + "  ".join(f"{k:>9}" for k in keys) + "\n")
    for row in rows:
        out.write(f"{row['value']:>14}  " + "  ".join(f"{100 * row[k]:9.1f}" for k in keys) + "\n")
    if args.report:
        Path(args.report).write_text(json.dumps({"axis": args.axis, "rows": rows}, indent=2) + "\n", encoding="utf-8")
    return 0


def cmd_schedule(args, out):
    schedule = TemperatureSchedule(args.t1, args.t2, args.max_iter)
    for it in args.at:
        out.write(f"{it}\t{schedule_temperature(schedule, it):.6g}\n")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "sweep": cmd_sweep,
    "schedule": cmd_schedule,
}


def main(argv=None, out=None):
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    echo_config(args, out)
    try:
        return COMMANDS[args.command](args, out)
    except RankedListError as exc:
        sys.stderr.write(f"rankedlist {args.command}: error: {exc}\n")
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
