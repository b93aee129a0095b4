"""Command-line entry point: generate, train, predict, evaluate, report.

Exit codes: 0 success, 1 bad arguments, 2 data/format errors.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .baselines import constant_forecast, previous_season_forecast
from .configio import ConfigError
from .fileio import FormatError, read_manifest, write_pgm
from .metrics import (METRIC_NAMES, aggregate, cube_pixel_metrics, error_map,
                      read_summary_csv, write_ecdf_csv, write_summary_csv)
from .minicube import ForecastConfig, load_minicube
from .model import load_checkpoint, predict
from .synthgen import GeneratorConfig, generate_dataset
from .training import TrainingError, train

BASELINES = ("constant", "previous-season")


def _write_meta(out_dir, args, cfg):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "run.meta"), "w") as f:
        f.write(f"version={__version__}\n")
        f.write(f"command={' '.join(sys.argv[1:] or [args.command])}\n")
        for key, val in sorted(vars(cfg).items()):
            f.write(f"{key}={val}\n")


def _baseline_predict(name, cube, cfg, lag):
    if name == "constant":
        pred, _ = constant_forecast(cube, cfg)
        return pred
    return previous_season_forecast(cube, cfg, steps_per_year=lag)


def _load_model(args):
    params, echo = load_checkpoint(args.ckpt)
    if getattr(args, "ablate_weather", False):
        echo.ablate_weather = True
    return params, echo


def cmd_generate(args):
    cfg = GeneratorConfig.from_file(args.config) if args.config \
        else GeneratorConfig().validate()
    if args.seed is not None:
        cfg.seed = args.seed
    manifest = generate_dataset(cfg, args.count, args.out)
    _write_meta(args.out, args, cfg)
    print(manifest)
    return 0


def cmd_train(args):
    cfg = ForecastConfig.from_file(args.config) if args.config \
        else ForecastConfig().validate()
    if args.ablate_weather:
        cfg.ablate_weather = True
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    log_path = args.log or (args.out + ".log.csv")
    _, log = train(args.manifest, cfg, checkpoint_path=args.out,
                   log_path=log_path)
    _write_meta(os.path.dirname(os.path.abspath(args.out)) or ".", args, cfg)
    best = min(row[2] for row in log.epochs)
    print(f"checkpoint={args.out} best_val_rmse={best:.6f}")
    return 0


def cmd_predict(args):
    cube = load_minicube(args.cube)
    if args.baseline:
        cfg = ForecastConfig(n=cube.n, k=cube.k, H=cube.grid[0],
                             W=cube.grid[1], D=cube.drivers.shape[1])
        pred = _baseline_predict(args.baseline, cube, cfg, args.season_length)
    else:
        if not args.ckpt:
            raise ConfigError("predict needs --ckpt or --baseline")
        params, cfg = _load_model(args)
        pred = predict(cube, params, cfg)
    os.makedirs(args.out, exist_ok=True)
    np.save(os.path.join(args.out, "predictions.npy"), pred)
    target = cube.ndvi[cube.n:]
    mask = cube.mask[cube.n:]
    for i in range(pred.shape[0]):
        # NDVI previews map [-1, 1] to [0, 255]
        write_pgm(os.path.join(args.out, f"pred_{i:02d}.pgm"),
                  (pred[i] + 1.0) / 2.0)
        diff, _ = error_map(pred[i], target[i], mask[i])
        write_pgm(os.path.join(args.out, f"errmap_{i:02d}.pgm"),
                  diff, scale=0.5)
    _write_meta(args.out, args, cfg)
    print(os.path.join(args.out, "predictions.npy"))
    return 0


def cmd_evaluate(args):
    paths = read_manifest(args.manifest)
    if not paths:
        raise FormatError(f"manifest {args.manifest} lists no cubes")
    cubes = [load_minicube(p) for p in paths]
    if args.baseline:
        model_name = args.baseline
        cfg = ForecastConfig(n=cubes[0].n, k=cubes[0].k, H=cubes[0].grid[0],
                             W=cubes[0].grid[1], D=cubes[0].drivers.shape[1])
        predict_fn = lambda cube: _baseline_predict(
            args.baseline, cube, cfg, args.season_length)
    else:
        if not args.ckpt:
            raise ConfigError("evaluate needs --ckpt or --baseline")
        params, cfg = _load_model(args)
        model_name = "convlstm-ablated" if cfg.ablate_weather else "convlstm"
        predict_fn = lambda cube: predict(cube, params, cfg)

    per_cube = [(cube.masked_fraction, cube_pixel_metrics(cube, predict_fn(cube)))
                for cube in cubes]
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for rank_by, fname in (("rmse", "summary.csv"),
                           ("nse", "summary_nse_ranked.csv")):
        summary = aggregate(per_cube, rank_by=rank_by)
        write_summary_csv(os.path.join(args.out, fname),
                          [(model_name, summary)])
        if rank_by == "rmse":
            rows.append((model_name, summary))
    pool = [p for _, pixels in per_cube for p in pixels]
    for metric in METRIC_NAMES:
        write_ecdf_csv(os.path.join(args.out, f"ecdf_{metric}.csv"),
                       [getattr(p, metric) for p in pool])
    _write_meta(args.out, args, cfg)
    for model, summary in rows:
        print(f"{model}: rmse={summary['rmse']:.6f} nse={summary['nse']:.6f}")
    return 0


def cmd_report(args):
    rows = []
    for path in args.summaries:
        rows.extend(read_summary_csv(path))
    write_summary_csv(args.out, rows)
    for model, summary in rows:
        print(f"{model}: rmse={summary['rmse']:.6f} nse={summary['nse']:.6f}")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(1)  # bad arguments exit 1, not argparse's 2


def build_parser():
    parser = _Parser(prog="greencast",
                     description="ConvLSTM vegetation forecasting pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("--config", help="generator key=value config file")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="train a model on a manifest")
    p.add_argument("--config", help="forecast key=value config file")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="TrainLog CSV path")
    p.add_argument("--ablate-weather", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("predict", help="forecast one cube")
    p.add_argument("--ckpt")
    p.add_argument("--cube", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--baseline", choices=BASELINES)
    p.add_argument("--ablate-weather", action="store_true")
    p.add_argument("--season-length", type=int, default=12)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("evaluate", help="score a model over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ckpt")
    p.add_argument("--baseline", choices=BASELINES)
    p.add_argument("--ablate-weather", action="store_true")
    p.add_argument("--season-length", type=int, default=12)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("report", help="merge evaluation summaries")
    p.add_argument("--summaries", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except (ConfigError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, TrainingError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry():
    raise SystemExit(main())
