"""``gasfgan`` command line.

    gasfgan ingest   --config run.yaml
    gasfgan cluster  --config run.yaml [--k 5]
    gasfgan train    --config run.yaml [--cluster 0] [--day-class weekday] [--resume]
    gasfgan impute   --config run.yaml [--sweep | --mr 0.05,0.2 | --one-shot day.csv]
    gasfgan evaluate --config run.yaml
    gasfgan report   --config run.yaml

Exit codes: 0 success, 2 configuration error, 3 data error, 4 compute error.
"""
from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

from filelock import FileLock, Timeout

from gasfgan import pipeline
from gasfgan.config import RunConfig
from gasfgan.data import DAY_CLASSES
from gasfgan.errors import CheckpointError, ComputeError, ConfigError, DataError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_COMPUTE = 0, 2, 3, 4


def _mr_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of rates: {text}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="YAML run config")
    common.add_argument("--seed", type=int, help="override the global seed")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="gasfgan", description=(
        "Traffic-flow imputation with GAN-generated GASF images."))
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", parents=[common], help="parse raw CSV into datasets")
    p = sub.add_parser("cluster", parents=[common], help="group sensors")
    p.add_argument("--k", type=int, help="fix K and skip the elbow search")
    p = sub.add_parser("train", parents=[common], help="train per-cluster models")
    p.add_argument("--cluster", type=int)
    p.add_argument("--day-class", choices=DAY_CLASSES)
    p.add_argument("--resume", action="store_true",
                   help="continue from the last saved checkpoint")
    p = sub.add_parser("impute", parents=[common], help="fill gaps")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--sweep", action="store_true",
                      help="corrupt test days at the configured missing rates")
    mode.add_argument("--mr", type=_mr_list, help="comma-separated missing rates")
    mode.add_argument("--one-shot", type=Path, metavar="FILE",
                      help="impute the days in a flow CSV")
    p.add_argument("--cluster", type=int)
    sub.add_parser("evaluate", parents=[common], help="aggregate sweep metrics")
    sub.add_parser("report", parents=[common], help="write figures")
    return parser


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "mr", None) is not None:
        cfg.mr_sweep = tuple(args.mr)
    cfg.validate(require_data=args.command == "ingest")
    return cfg


def _dispatch(args, cfg):
    if args.command == "ingest":
        summary = pipeline.cmd_ingest(cfg)
        print(f"ingested {summary['n_sensors']} sensors")
    elif args.command == "cluster":
        a = pipeline.cmd_cluster(cfg, k=args.k)
        print(f"K={a.K}")
    elif args.command == "train":
        paths = pipeline.cmd_train(cfg, args.cluster, args.day_class, args.resume)
        for p in paths.values():
            print(p)
    elif args.command == "impute":
        res = pipeline.cmd_impute(cfg, mr=args.mr, sweep=args.sweep,
                                  one_shot=args.one_shot, cluster_id=args.cluster)
        if hasattr(res, "aggregates"):
            print(res.aggregates.to_string(index=False))
        else:
            print(f"imputed {len(res)} days")
    elif args.command == "evaluate":
        reports = pipeline.cmd_evaluate(cfg)
        print(reports["mr"].aggregates.to_string(index=False))
    elif args.command == "report":
        for p in pipeline.cmd_report(cfg):
            print(p)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    warnings.simplefilter("default")
    try:
        cfg = _load_config(args)
        Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
        lock = FileLock(str(Path(cfg.output_dir) / ".gasfgan.lock"))
        try:
            lock.acquire(timeout=0)
        except Timeout:
            raise ConfigError(f"another gasfgan run holds {lock.lock_file}") from None
        try:
            _dispatch(args, cfg)
        finally:
            lock.release()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ComputeError as exc:
        print(f"compute error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
