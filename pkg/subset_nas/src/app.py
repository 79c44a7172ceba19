"""Seeded experiment runner and the data-fraction ablation."""
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Dict, List, Optional, Sequence

from core.config import ConfigError, ExperimentConfig
from core.nn.supernet import SearchSpace
from core.services.hpo_service import final_test_accuracy, run_hpo
from core.services.search_service import SearchError, adaptive_dpt, darts_pt, darts_pt_config, train_final
from core.utils.data_utils import Dataset, gen_blobs, load_dataset
from core.utils.random_utils import derive_seed
from core.utils.trace_utils import TraceWriter

from .oracle import OracleCache, OracleRanking, oracle_ranking
from .reporting import mean_std

logger = logging.getLogger(__name__)

DEFAULT_FRACTIONS = (0.01, 0.02, 0.05, 0.10, 0.20, 0.50, 1.00)
INTERIOR_FRACTIONS = (0.05, 0.10, 0.20, 0.50)
ABLATION_COLUMNS = ["projection", "fraction", "percent_data", "status", "runs", "mean_accuracy",
                    "std_accuracy", "mean_cost", "interior_max"]


def load_experiment_data(cfg: ExperimentConfig) -> Dataset:
    if cfg.data_path:
        return load_dataset(cfg.data_path)
    return gen_blobs(cfg.dataset, cfg.data_seed)


def run_nas_cell(cfg: ExperimentConfig, dataset: Dataset, seed: int,
                 ranking: Optional[OracleRanking] = None) -> Dict:
    """One search seed: search, then retrain the found architecture on the train split."""
    space = SearchSpace.resolve(cfg.space)
    bilevel = cfg.bilevel
    if cfg.method == "darts-pt":
        arch, trace = darts_pt(space, dataset, bilevel, seed, cfg.master_seed)
        fraction = 1.0
    elif cfg.method == "darts":
        arch, trace = adaptive_dpt(space, dataset, replace(darts_pt_config(bilevel), discretization="argmax"),
                                   seed, cfg.master_seed, method="darts")
        fraction = 1.0
    else:
        arch, trace = adaptive_dpt(space, dataset, replace(bilevel, selector=cfg.method),
                                   seed, cfg.master_seed, method=cfg.method)
        fraction = bilevel.fraction

    accuracy = train_final(
        arch, dataset.X_train, dataset.y_train, dataset.X_test, dataset.y_test,
        bilevel.final_epochs, derive_seed(cfg.master_seed, seed, "final"),
        lr=bilevel.lr, momentum=bilevel.momentum, batch_size=bilevel.batch_size,
        schedule=bilevel.schedule, classes=dataset.classes,
    )
    record = trace.to_record()
    record.update({
        "kind": "nas",
        "space": space.name,
        "master_seed": cfg.master_seed,
        "fraction": fraction,
        "projection_data": "full" if cfg.method in ("darts-pt", "darts") else bilevel.projection_data,
        "test_accuracy": accuracy,
        "oracle_rank": None if ranking is None else ranking.rank_of(arch),
        "oracle_top_fraction": None if ranking is None else ranking.top_fraction(arch),
    })
    return record


def run_hpo_cell(cfg: ExperimentConfig, dataset: Dataset, seed: int) -> Dict:
    result = run_hpo(cfg.method, dataset, cfg.hpo, cfg.adaptive, seed, cfg.master_seed)
    best = result.best
    accuracy = final_test_accuracy(best.hyperparameters or {}, dataset, int(cfg.hpo.max_budget),
                                   derive_seed(cfg.master_seed, seed, "final"),
                                   cfg.hpo.batch_size, cfg.hpo.momentum) if not best.failed else 0.0
    adaptive = cfg.method.startswith("adaptive-")
    return {
        "kind": "hpo",
        "method": cfg.method,
        "seed": seed,
        "master_seed": cfg.master_seed,
        "fraction": cfg.adaptive.fraction if adaptive else 1.0,
        "best": best.to_record(),
        "score": None if best.failed else best.score,
        "test_accuracy": accuracy,
        "cost": result.cost,
        "refresh_steps": best.refresh_events,
        "trial_count": len(result.trials),
        "trials": [t.to_record() for t in result.trials],
    }


def _run_cell(cfg: ExperimentConfig, dataset: Dataset, seed: int,
              ranking: Optional[OracleRanking]) -> Dict:
    if cfg.is_hpo:
        return run_hpo_cell(cfg, dataset, seed)
    return run_nas_cell(cfg, dataset, seed, ranking)


class ExperimentRunner:
    """Runs one ExperimentConfig over its seeds and appends one record per seed."""

    def __init__(self, cfg: ExperimentConfig, output_dir: Optional[str] = None, workers: int = 1,
                 dataset: Optional[Dataset] = None):
        self.cfg = cfg
        self.workers = max(1, workers)
        self.dataset = dataset if dataset is not None else load_experiment_data(cfg)
        output = cfg.output
        if output_dir and not os.path.isabs(output):
            output = os.path.join(output_dir, output)
        self.output = output

    def oracle(self) -> Optional[OracleRanking]:
        if self.cfg.oracle is None or self.cfg.is_hpo:
            return None
        space = SearchSpace.resolve(self.cfg.space)
        b = self.cfg.bilevel
        return oracle_ranking(
            space, self.dataset, self.cfg.oracle.epochs, self.cfg.oracle.seeds,
            cache=OracleCache(self.cfg.oracle.cache_dir),
            lr=b.lr, momentum=b.momentum, batch_size=b.batch_size, schedule=b.schedule,
        )

    def run(self, write: bool = True) -> List[Dict]:
        ranking = self.oracle()
        seeds = list(self.cfg.seeds)
        if self.workers > 1 and len(seeds) > 1:
            with ProcessPoolExecutor(max_workers=self.workers) as pool:
                futures = [pool.submit(_run_cell, self.cfg, self.dataset, s, ranking) for s in seeds]
                records = [f.result() for f in futures]
        else:
            records = [_run_cell(self.cfg, self.dataset, s, ranking) for s in seeds]

        if write:
            with TraceWriter(self.output) as writer:
                for record in records:
                    writer.write(record)
            logger.info("appended %d records to %s", len(records), self.output)
        return records


def run_experiment(cfg: ExperimentConfig, output_dir: Optional[str] = None, workers: int = 1,
                   dataset: Optional[Dataset] = None, write: bool = True) -> List[Dict]:
    return ExperimentRunner(cfg, output_dir, workers, dataset).run(write)


def ablate(cfg: ExperimentConfig, fractions: Sequence[float] = DEFAULT_FRACTIONS,
           modes: Sequence[str] = ("subset", "full"), output_dir: Optional[str] = None,
           workers: int = 1) -> List[Dict]:
    """Sweep data fraction x projection-data mode; one plot-ready row per cell.

    A fraction whose subset would be empty yields a ``failed`` row. Each mode's
    rows carry ``interior_max`` = whether some fraction in 5-50% matched or beat
    the 100% row.
    """
    if not fractions:
        raise ConfigError("ablation needs at least one fraction")
    if cfg.is_hpo:
        raise ConfigError(f"ablation runs architecture search methods, not {cfg.method}")
    dataset = load_experiment_data(cfg)
    rows = []
    for mode in modes:
        mode_rows = []
        for fraction in fractions:
            row = {"projection": mode, "fraction": f"{fraction:g}",
                   "percent_data": f"{100.0 * fraction:g}", "interior_max": ""}
            try:
                cell = replace(cfg, bilevel=replace(cfg.bilevel, fraction=fraction, projection_data=mode))
                records = run_experiment(cell, output_dir, workers, dataset, write=False)
            except (SearchError, ConfigError) as e:
                logger.warning("ablation row %s @ %g failed: %s", mode, fraction, e)
                row.update(status="failed", runs="0", mean_accuracy="", std_accuracy="", mean_cost="")
                mode_rows.append((fraction, None, row))
                continue
            acc_mean, acc_std = mean_std([100.0 * r["test_accuracy"] for r in records])
            cost = mean_std([float(r["cost"]) for r in records])[0]
            row.update(status="ok", runs=str(len(records)), mean_accuracy=f"{acc_mean:.2f}",
                       std_accuracy=f"{acc_std:.2f}", mean_cost=f"{cost:.1f}")
            mode_rows.append((fraction, acc_mean, row))

        full = [acc for f, acc, _ in mode_rows if abs(f - 1.0) < 1e-12 and acc is not None]
        interior = [acc for f, acc, _ in mode_rows
                    if any(abs(f - g) < 1e-12 for g in INTERIOR_FRACTIONS) and acc is not None]
        if full and interior:
            found = max(interior) >= full[0]
            if not found:
                logger.warning("%s projection: no fraction in 5-50%% reached the 100%% row", mode)
            for _, _, row in mode_rows:
                row["interior_max"] = "yes" if found else "no"
        rows.extend(row for _, _, row in mode_rows)
    return rows
