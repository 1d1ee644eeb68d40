"""Command-line entry point: config init, collect, pretrain, fly, compare, stats.

Exit codes: 0 ok, 1 usage or configuration error, 2 unstable data collection,
3 training failure, 4 aborted or guarded flight (partial outputs are still
written).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .config import CONFIG_ENV, EVALUATION_NAMES, ExperimentConfig, load_config, override
from .errors import ConfigError, CorruptFile, QuadLearnError, Unstable, VersionMismatch
from .harness import (
    CONTROLLERS,
    ExperimentSpec,
    compare,
    euclidean_error_series,
    export_csv,
    export_plot_data,
    mae,
    quartiles,
    run_experiment,
)
from .loops import Dataset, collect_offline, pretrain
from .network import AXES, ControllerModel, deserialize_model, serialize_model

log = logging.getLogger("quadlearn")

EXIT_OK, EXIT_USAGE, EXIT_UNSTABLE, EXIT_TRAINING, EXIT_FLIGHT = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with 2, which is taken
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- commands


def cmd_config_init(args, cfg: ExperimentConfig) -> int:
    text = ExperimentConfig().to_json()
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote reference config to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_collect(args, cfg: ExperimentConfig) -> int:
    cfg = override(cfg, "collection", samples=args.samples)
    cfg = override(cfg, "seeds", collect=args.seed)
    try:
        ds = collect_offline(
            cfg.plant.build(),
            cfg.pid,
            cfg.training_trajectories,
            cfg.collection.samples,
            cfg.seeds.collect,
            cfg.collection.disturbance(),
        )
    except Unstable as exc:
        print(f"collection rejected: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ds.write_csv(out)
    for a, name in enumerate(AXES):
        print(f"axis {name}: {ds.X.shape[1]} samples")
    print(f"dataset written to {out}")
    return EXIT_OK


def _write_training_outputs(report, model_path: Path) -> tuple[Path, Path]:
    report_path = model_path.with_suffix(".report.json")
    loss_path = model_path.with_suffix(".loss.csv")
    summary = [{k: v for k, v in a.items() if k != "history"} for a in report.axes]
    report_path.write_text(json.dumps({"axes": summary}, indent=2) + "\n")
    with open(loss_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("axis", "iteration", "loss"))
        for a in report.axes:
            for i, f in enumerate(a["history"]):
                w.writerow((a["axis"], i, repr(float(f))))
    return report_path, loss_path


def _pretrain_to(cfg: ExperimentConfig, dataset: Dataset, model_path: Path) -> tuple[ControllerModel, int]:
    model, report = pretrain(dataset, cfg.network, cfg.trainer)
    model_path.parent.mkdir(parents=True, exist_ok=True)
    serialize_model(model, model_path)
    report_path, loss_path = _write_training_outputs(report, model_path)
    for a in report.axes:
        flag = " (constant-target fallback)" if a["fallback"] else ""
        print(
            f"axis {a['axis']}: {a['status']} after {a['iterations']} iterations, "
            f"train NSE {a['train_nse']:.3g}, held-out NSE {a['holdout_nse']:.3g}{flag}"
        )
    print(f"model written to {model_path}; report {report_path}; loss curves {loss_path}")
    return model, (EXIT_TRAINING if report.failed else EXIT_OK)


def cmd_pretrain(args, cfg: ExperimentConfig) -> int:
    cfg = override(cfg, "trainer", max_iter=args.max_iter, seed=args.seed)
    dataset = Dataset.read_csv(args.dataset)
    _, code = _pretrain_to(cfg, dataset, Path(args.out))
    if code:
        print("training produced non-finite values", file=sys.stderr)
    return code


def _load_model(path: str | None, controller: str) -> ControllerModel | None:
    if controller == "pid":
        return None
    if not path:
        raise UsageError(f"--model is required for controller {controller}")
    if not Path(path).exists():
        raise UsageError(f"model file {path} does not exist")
    return deserialize_model(path)


def _apply_flight_flags(args, cfg: ExperimentConfig) -> ExperimentConfig:
    if getattr(args, "alpha", None) is not None:
        cfg = override(cfg, "fuzzy", alpha=tuple(args.alpha))
    if getattr(args, "nominal", False):
        cfg = override(cfg, "disturbance", force=(0.0, 0.0, 0.0), mass_schedule=())
    return cfg


def _spec(cfg: ExperimentConfig, controller: str, trajectory: str, model) -> ExperimentSpec:
    if trajectory not in cfg.evaluation:
        raise UsageError(f"unknown trajectory {trajectory!r}; config defines {', '.join(cfg.evaluation)}")
    return ExperimentSpec(
        controller,
        cfg.evaluation[trajectory],
        plant=cfg.plant.build(),
        pid=cfg.pid,
        model=model,
        fuzzy=cfg.fuzzy,
        online=cfg.online,
        trainer=cfg.trainer,
        disturbance=cfg.disturbance,
        name=trajectory,
    )


def cmd_fly(args, cfg: ExperimentConfig) -> int:
    cfg = _apply_flight_flags(args, cfg)
    model = _load_model(args.model, args.controller)
    spec = _spec(cfg, args.controller, args.trajectory, model)
    seed = cfg.seeds.flight if args.seed is None else args.seed
    result = run_experiment(spec, seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    export_csv(result.log, out)
    if result.model is not None:
        model_out = Path(args.model_out) if args.model_out else out.with_suffix(".model.json")
        serialize_model(result.model, model_out)
        print(f"post-trained model written to {model_out}")
    steps = result.log["step_us"]
    try:
        value = f"{mae(euclidean_error_series(result.log)):.4f} m"
    except QuadLearnError:
        value = "n/a (no post-settling rows)"
    print(f"{args.controller} on {args.trajectory}: MAE {value}, mean step {steps.mean():.1f} us")
    print(f"flight log written to {out}")
    if result.failed:
        print(f"flight aborted: {result.log.aborted}", file=sys.stderr)
        return EXIT_FLIGHT
    if result.log.meta.get("guard"):
        print("divergence guard tripped; weights were frozen", file=sys.stderr)
        return EXIT_FLIGHT
    return EXIT_OK


def cmd_compare(args, cfg: ExperimentConfig) -> int:
    cfg = _apply_flight_flags(args, cfg)
    cfg = override(cfg, "seeds", repetitions=args.repetitions)
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    model_path = Path(args.model) if args.model else out / "model.json"
    code = EXIT_OK
    if model_path.exists():
        model = deserialize_model(model_path)
    else:
        print(f"no model at {model_path}; collecting data and pre-training")
        try:
            ds = collect_offline(
                cfg.plant.build(),
                cfg.pid,
                cfg.training_trajectories,
                cfg.collection.samples,
                cfg.seeds.collect,
                cfg.collection.disturbance(),
            )
        except Unstable as exc:
            print(f"collection rejected: {exc}", file=sys.stderr)
            return EXIT_UNSTABLE
        ds.write_csv(out / "dataset.csv")
        model, code = _pretrain_to(cfg, ds, model_path)
        if code:
            return code
    trajectories = args.trajectories or list(cfg.evaluation)
    specs = [_spec(cfg, c, t, model) for t in trajectories for c in CONTROLLERS]
    cmp = compare(specs, cfg.seeds.repetitions, cfg.seeds.flight, args.jobs)

    export_csv([r.metrics_row() for r in cmp.runs], out / "metrics.csv")
    export_csv(cmp.reports, out / "summary.csv")
    for t in trajectories:
        first = {r.controller: r.log for r in cmp.runs if r.trajectory == t and r.run == 0}
        export_plot_data(first, out / f"plot_{t}.csv")

    print(f"{'trajectory':<12} {'controller':<6} {'median MAE':>10} {'vs PID':>8} {'vs DNN0':>8} {'step us':>8}")
    for r in cmp.reports:
        vs = [r.improvements.get(b) for b in ("pid", "dnn0")]
        vs_txt = [f"{100 * v:7.1f}%" if v is not None else f"{'-':>8}" for v in vs]
        print(f"{r.trajectory:<12} {r.controller:<6} {r.mae:10.4f} {vs_txt[0]} {vs_txt[1]} {r.mean_step_us:8.0f}")
    print(f"metrics written to {out}")
    if cmp.failed:
        bad = [f"{r.trajectory}/{r.controller}" for r in cmp.reports if r.partial]
        print(f"aborted runs in: {', '.join(bad)}", file=sys.stderr)
        return EXIT_FLIGHT
    return code


def cmd_stats(args, cfg: ExperimentConfig) -> int:
    groups: dict[tuple[str, str], list[float]] = {}
    steps: dict[tuple[str, str], list[float]] = {}
    try:
        with open(args.metrics, newline="") as fh:
            for row in csv.DictReader(fh):
                key = (row["trajectory"], row["controller"])
                groups.setdefault(key, []).append(float(row["mae"]))
                steps.setdefault(key, []).append(float(row["mean_step_us"]))
    except (KeyError, ValueError) as exc:
        raise CorruptFile(f"{args.metrics}: {exc}") from exc
    print(f"{'trajectory':<12} {'controller':<6} {'n':>2} {'min':>7} {'q1':>7} {'median':>7} {'q3':>7} {'max':>7} {'step us':>8}")
    for (t, c), maes in groups.items():
        vals = [v for v in maes if np.isfinite(v)]
        q = quartiles(vals) if vals else (float("nan"),) * 5
        print(f"{t:<12} {c:<6} {len(maes):2d} " + " ".join(f"{v:7.4f}" for v in q) + f" {np.mean(steps[(t, c)]):8.0f}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="quadlearn", description="Quadcopter trajectory tracking with online-trained neural controllers.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument(
        "--config",
        metavar="PATH",
        help=f"experiment config JSON (default: ${CONFIG_ENV}, else built-in defaults)",
    )
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    cfg_p = sub.add_parser("config", help="configuration helpers")
    cfg_sub = cfg_p.add_subparsers(dest="config_command", required=True, parser_class=_Parser)
    init = cfg_sub.add_parser("init", help="write the fully-defaulted reference config")
    init.add_argument("--out", metavar="PATH", help="output file (default: stdout)")
    init.set_defaults(func=cmd_config_init)

    c = sub.add_parser("collect", help="fly PID over the training trajectories and record samples")
    c.add_argument("--samples", type=int, help="samples per axis (overrides collection.samples)")
    c.add_argument("--seed", type=int, help="collection seed (overrides seeds.collect)")
    c.add_argument("--out", required=True, metavar="PATH", help="dataset CSV to write")
    c.set_defaults(func=cmd_collect)

    t = sub.add_parser("pretrain", help="fit the per-axis networks to a dataset")
    t.add_argument("--dataset", required=True, metavar="PATH", help="dataset CSV from 'collect'")
    t.add_argument("--out", required=True, metavar="PATH", help="model JSON to write (report and loss CSV go alongside)")
    t.add_argument("--max-iter", type=int, help="BFGS iteration cap (overrides trainer.max_iter)")
    t.add_argument("--seed", type=int, help="initialization seed (overrides trainer.seed)")
    t.set_defaults(func=cmd_pretrain)

    for name, helptext in (("fly", "single flight"), ("compare", "controller x trajectory matrix")):
        f = sub.add_parser(name, help=helptext)
        f.add_argument("--alpha", type=float, nargs=3, metavar=("AX", "AY", "AZ"), help="per-axis adaptation rates")
        f.add_argument("--nominal", action="store_true", help="drop the configured wind and mass change (noise stays)")
        if name == "fly":
            f.add_argument("--controller", required=True, choices=CONTROLLERS)
            f.add_argument("--trajectory", default="slow_circle", help=f"one of the configured names ({', '.join(EVALUATION_NAMES)} by default)")
            f.add_argument("--model", metavar="PATH", help="pre-trained model (required for dnn0 and dnn)")
            f.add_argument("--model-out", metavar="PATH", help="where to store the post-trained model (dnn only)")
            f.add_argument("--seed", type=int, help="sensor-noise seed (overrides seeds.flight)")
            f.add_argument("--out", required=True, metavar="PATH", help="flight log CSV to write")
            f.set_defaults(func=cmd_fly)
        else:
            f.add_argument("--model", metavar="PATH", help="pre-trained model; collected and trained when missing")
            f.add_argument("--out", metavar="DIR", help="output directory (default: output_dir from config)")
            f.add_argument("--repetitions", type=int, help="runs per cell (overrides seeds.repetitions)")
            f.add_argument("--trajectories", nargs="+", metavar="NAME", help="subset of configured trajectories")
            f.add_argument("--jobs", type=int, default=1, help="parallel worker threads")
            f.set_defaults(func=cmd_compare)

    s = sub.add_parser("stats", help="quartiles of per-run MAEs from a metrics CSV")
    s.add_argument("--metrics", required=True, metavar="PATH", help="metrics.csv written by 'compare'")
    s.set_defaults(func=cmd_stats)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorruptFile, VersionMismatch, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
