#!/usr/bin/env python3
"""
subset-nas - Main entry point
Architecture and hyperparameter search on adaptively selected data subsets
"""
import argparse
import json
import logging
import os
import sys
from typing import List, Optional

# Add parent directory to path so we can import core
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from core.config import ConfigError, ExperimentConfig, load_config
from core.nn.supernet import SearchSpace
from core.utils.data_utils import BlobSpec, gen_blobs, load_dataset, save_dataset
from core.utils.trace_utils import read_trace

try:
    from .src.app import ABLATION_COLUMNS, DEFAULT_FRACTIONS, ablate, run_experiment
    from .src.oracle import OracleCache, oracle_ranking
    from .src.reporting import REPORT_COLUMNS, report, write_csv
except ImportError:
    from subset_nas.src.app import ABLATION_COLUMNS, DEFAULT_FRACTIONS, ablate, run_experiment
    from subset_nas.src.oracle import OracleCache, oracle_ranking
    from subset_nas.src.reporting import REPORT_COLUMNS, report, write_csv

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

logger = logging.getLogger("subset_nas")


class UsageError(ConfigError):
    """Bad command-line arguments."""
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _int_list(text: str) -> List[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _fraction_list(text: str) -> List[float]:
    """Comma-separated fractions, or percentages when any value is above 1."""
    values = [float(x) for x in text.split(",") if x.strip()]
    if any(v > 1.0 for v in values):
        return [v / 100.0 for v in values]
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="subset-nas", description=__doc__)
    sub = parser.add_subparsers(dest="command")
    sub.required = True

    p = sub.add_parser("gen-data", help="generate a blob dataset as CSV splits")
    p.add_argument("spec", help="JSON file with the blob spec")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("oracle", help="exhaustively rank an enumerable search space")
    p.add_argument("space", help="builtin space name or JSON path")
    p.add_argument("data", help="dataset directory written by gen-data")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--seeds", type=_int_list, default=[0, 1])
    p.add_argument("--cache-dir", default=".oracle_cache")
    p.add_argument("--out", help="write the ranking as CSV")

    for name, text in (("search", "architecture search over seeds"),
                       ("hpo", "multi-fidelity hyperparameter search over seeds")):
        p = sub.add_parser(name, help=text)
        p.add_argument("config", help="experiment JSON file")

    p = sub.add_parser("ablate", help="sweep data fraction and projection-data mode")
    p.add_argument("config")
    p.add_argument("--fractions", type=_fraction_list, default=list(DEFAULT_FRACTIONS))
    p.add_argument("--projection", choices=("subset", "full", "both"), default="both")
    p.add_argument("--out", default="ablation.csv")

    p = sub.add_parser("report", help="summarise a JSONL trace")
    p.add_argument("trace")
    p.add_argument("--out")
    return parser


def _output_path(path: str, output_dir: str) -> str:
    return path if os.path.isabs(path) else os.path.join(output_dir, path)


def _load_experiment(path: str, want_hpo: bool) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(path)
    if cfg.is_hpo != want_hpo:
        command = "hpo" if cfg.is_hpo else "search"
        raise ConfigError(f"method {cfg.method!r} belongs to the '{command}' command")
    return cfg


def run(args: argparse.Namespace, runtime) -> None:
    if args.command == "gen-data":
        try:
            with open(args.spec, "r") as f:
                spec = BlobSpec.from_dict(json.load(f))
        except (OSError, json.JSONDecodeError, TypeError, ValueError) as e:
            raise ConfigError(f"Invalid blob spec {args.spec}: {e}") from e
        save_dataset(gen_blobs(spec, args.seed), args.out)
        print(f"Wrote dataset to {args.out}")

    elif args.command == "oracle":
        ranking = oracle_ranking(SearchSpace.resolve(args.space), load_dataset(args.data),
                                 args.epochs, args.seeds, cache=OracleCache(args.cache_dir))
        rows = [{"rank": e.rank, "index": e.index, "mean_accuracy": f"{e.mean_accuracy:.4f}",
                 "architecture": json.dumps(e.architecture)}
                for e in sorted(ranking.entries, key=lambda e: e.rank)]
        if args.out:
            write_csv(rows, args.out)
        for row in rows[:5]:
            print(f"{row['rank']:>3}  {row['mean_accuracy']}  {row['architecture']}")

    elif args.command in ("search", "hpo"):
        cfg = _load_experiment(args.config, want_hpo=args.command == "hpo")
        records = run_experiment(cfg, runtime.output_dir, runtime.workers)
        for r in records:
            print(f"{r['method']} seed {r['seed']}: test accuracy {100 * r['test_accuracy']:.2f}%, "
                  f"cost {r['cost']:.0f}")

    elif args.command == "ablate":
        cfg = _load_experiment(args.config, want_hpo=False)
        modes = ("subset", "full") if args.projection == "both" else (args.projection,)
        rows = ablate(cfg, args.fractions, modes, runtime.output_dir, runtime.workers)
        out = _output_path(args.out, runtime.output_dir)
        os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
        write_csv(rows, out, ABLATION_COLUMNS)
        print(f"Wrote {len(rows)} ablation rows to {out}")

    elif args.command == "report":
        rows = report(read_trace(args.trace))
        if args.out:
            write_csv(rows, args.out, REPORT_COLUMNS)
        for row in rows:
            print(f"{row['method']:<14} {row['percent_data']:>4}%  {row['accuracy']:<16} "
                  f"cost x{row['cost_ratio'] or '-'}")


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    try:
        runtime = load_config()
        logging.basicConfig(level=runtime.log_level,
                            format="%(asctime)s %(levelname)s %(name)s: %(message)s")
        args = build_parser().parse_args(argv)
        run(args, runtime)
    except ConfigError as e:
        print(f"Configuration error: {e}")
        return EXIT_CONFIG
    except Exception as e:
        logger.exception("run failed")
        print(f"Error: {e}")
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
