"""Configuration management for subset-nas experiments."""
import json
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

from core.utils.data_utils import BlobSpec


class ConfigError(Exception):
    """Configuration related exception."""
    pass


NAS_METHODS = ("darts-pt", "darts", "random", "fl", "entropy", "glister", "gradmatch")
HPO_METHODS = ("hyperband", "dehb", "bohb", "adaptive-hyperband", "adaptive-dehb", "adaptive-bohb")
METHODS = NAS_METHODS + HPO_METHODS
SELECTOR_NAMES = ("full", "random", "fl", "entropy", "glister", "gradmatch")


def _from_dict(cls, data: Optional[Dict[str, Any]], section: str):
    data = dict(data or {})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"Unknown keys in {section}: {', '.join(unknown)}")
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigError(f"Invalid {section}: {e}") from e


@dataclass
class BilevelConfig:
    """Architecture search settings.

    ``refresh_epochs`` of None disables refreshes after the first selection.
    ``alpha_every`` is in mini-batch steps.
    """
    epochs: int = 100
    refresh_epochs: Optional[int] = 10
    alpha_every: int = 1
    fraction: float = 0.10
    zeta: float = 0.0
    alpha_lr: float = 0.05
    lr: float = 0.025
    momentum: float = 0.9
    batch_size: int = 64
    schedule: str = "cosine"
    projection_epochs: float = 25
    projection_data: str = "subset"
    discretization: str = "perturbation"
    selector: str = "glister"
    final_epochs: int = 50
    glister_eta: float = 0.025
    glister_rounds: int = 10
    glister_lambda: float = 0.0
    per_class: bool = True
    gradmatch_lambda: float = 0.5
    entropy_bins: int = 20
    entropy_base_epochs: int = 10
    fl_mode: str = "lazy"

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("bilevel.epochs must be >= 0")
        if self.refresh_epochs is not None and self.refresh_epochs < 1:
            raise ConfigError("bilevel.refresh_epochs must be >= 1 or null")
        if self.alpha_every < 1:
            raise ConfigError("bilevel.alpha_every must be >= 1")
        if not 0.0 < self.fraction <= 1.0:
            raise ConfigError(f"bilevel.fraction must lie in (0, 1], got {self.fraction}")
        if self.zeta < 0 or self.alpha_lr < 0:
            raise ConfigError("bilevel.zeta and bilevel.alpha_lr must be >= 0")
        if self.lr <= 0 or not 0.0 <= self.momentum < 1.0:
            raise ConfigError("bilevel.lr must be > 0 and bilevel.momentum in [0, 1)")
        if self.batch_size < 1:
            raise ConfigError("bilevel.batch_size must be >= 1")
        if self.schedule not in ("cosine", "constant"):
            raise ConfigError(f"bilevel.schedule must be 'cosine' or 'constant', got {self.schedule!r}")
        if self.projection_epochs < 0:
            raise ConfigError("bilevel.projection_epochs must be >= 0")
        if self.projection_data not in ("subset", "full"):
            raise ConfigError(f"bilevel.projection_data must be 'subset' or 'full', got {self.projection_data!r}")
        if self.discretization not in ("perturbation", "argmax"):
            raise ConfigError("bilevel.discretization must be 'perturbation' or 'argmax'")
        if self.selector not in SELECTOR_NAMES:
            raise ConfigError(f"bilevel.selector must be one of {SELECTOR_NAMES}, got {self.selector!r}")
        if self.fl_mode not in ("lazy", "naive"):
            raise ConfigError("bilevel.fl_mode must be 'lazy' or 'naive'")
        if self.glister_eta <= 0 or self.glister_rounds < 1 or self.glister_lambda < 0:
            raise ConfigError("bilevel GLISTER settings need eta > 0, rounds >= 1, lambda >= 0")

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "BilevelConfig":
        return _from_dict(cls, data, "bilevel")

    def selector_kwargs(self) -> Dict[str, Any]:
        """Constructor arguments for the configured selector."""
        if self.selector == "glister":
            return {
                "eta": self.glister_eta,
                "rounds": self.glister_rounds,
                "lam": self.glister_lambda,
                "regularizer": "facility-location" if self.glister_lambda > 0 else "none",
                "per_class": self.per_class,
            }
        if self.selector == "gradmatch":
            return {"lam": self.gradmatch_lambda, "per_class": self.per_class}
        if self.selector == "fl":
            return {"mode": self.fl_mode, "per_class": self.per_class}
        if self.selector == "entropy":
            return {"bins": self.entropy_bins, "base_epochs": self.entropy_base_epochs}
        return {}


@dataclass
class AdaptiveTrainerConfig:
    """Subset schedule for adaptive HPO trials."""
    fraction: float = 0.20
    refresh_epochs: int = 10
    selector: str = "glister"
    glister_eta: float = 0.025
    glister_rounds: int = 10

    def __post_init__(self):
        if not 0.0 < self.fraction <= 1.0:
            raise ConfigError(f"adaptive.fraction must lie in (0, 1], got {self.fraction}")
        if self.refresh_epochs < 1:
            raise ConfigError("adaptive.refresh_epochs must be >= 1")

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "AdaptiveTrainerConfig":
        return _from_dict(cls, data, "adaptive")


@dataclass
class HpoConfig:
    """Hyperband budgets, DE operators and the BOHB density model."""
    max_budget: int = 27
    eta: int = 3
    generations: int = 2
    iterations: int = 1
    mutation_factor: float = 0.5
    crossover_prob: float = 0.5
    gamma: float = 0.15
    min_points: Optional[int] = None
    random_fraction: float = 1.0 / 3.0
    num_candidates: int = 64
    batch_size: int = 64
    momentum: float = 0.9
    workers: int = 1

    def __post_init__(self):
        if self.max_budget < 1:
            raise ConfigError("hpo.max_budget must be >= 1")
        if self.eta < 2:
            raise ConfigError("hpo.eta must be >= 2")
        if self.generations < 0 or self.iterations < 1:
            raise ConfigError("hpo.generations must be >= 0 and hpo.iterations >= 1")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("hpo.gamma must lie in (0, 1)")
        if not 0.0 <= self.random_fraction <= 1.0 or not 0.0 <= self.crossover_prob <= 1.0:
            raise ConfigError("hpo.random_fraction and hpo.crossover_prob must lie in [0, 1]")
        if self.workers < 1:
            raise ConfigError("hpo.workers must be >= 1")

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "HpoConfig":
        return _from_dict(cls, data, "hpo")


@dataclass
class OracleConfig:
    epochs: int = 30
    seeds: List[int] = field(default_factory=lambda: [0, 1])
    cache_dir: str = ".oracle_cache"

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "OracleConfig":
        return _from_dict(cls, data, "oracle")


@dataclass
class ExperimentConfig:
    """One experiment: a method run over several seeds on one search space and dataset."""
    method: str
    space: str = "oracle-27"
    dataset: BlobSpec = field(default_factory=BlobSpec)
    data_seed: int = 0
    data_path: Optional[str] = None
    bilevel: BilevelConfig = field(default_factory=BilevelConfig)
    adaptive: AdaptiveTrainerConfig = field(default_factory=AdaptiveTrainerConfig)
    hpo: HpoConfig = field(default_factory=HpoConfig)
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    master_seed: int = 0
    output: str = "trace.jsonl"
    oracle: Optional[OracleConfig] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"Unknown method {self.method!r}; expected one of {', '.join(METHODS)}")
        if not self.seeds:
            raise ConfigError("seeds must be a nonempty list")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be unique")

    @property
    def is_hpo(self) -> bool:
        return self.method in HPO_METHODS

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown keys in experiment config: {', '.join(unknown)}")
        if "method" not in data:
            raise ConfigError("Missing required configuration: method")
        try:
            dataset = BlobSpec.from_dict(data.pop("dataset", {}) or {})
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid dataset spec: {e}") from e
        oracle = data.pop("oracle", None)
        return cls(
            dataset=dataset,
            bilevel=BilevelConfig.from_dict(data.pop("bilevel", None)),
            adaptive=AdaptiveTrainerConfig.from_dict(data.pop("adaptive", None)),
            hpo=HpoConfig.from_dict(data.pop("hpo", None)),
            oracle=None if oracle is None else OracleConfig.from_dict(oracle),
            **data,
        )

    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path, "r") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read experiment config {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError("Experiment config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class RuntimeConfig:
    """Process-level settings read from the environment."""
    output_dir: str = "results"
    workers: int = 1
    log_level: str = "INFO"


def load_config(project_name: str = None) -> RuntimeConfig:
    """
    Load runtime configuration from environment variables.

    Args:
        project_name: Optional name of the project to load specific config for
                     If provided, will look for PROJECT_NAME_* env vars

    Returns:
        RuntimeConfig: Configuration object with loaded values
    """
    load_dotenv()

    prefix = f"{project_name.upper()}_" if project_name else ""

    output_dir = os.getenv(f"{prefix}SUBSET_NAS_OUTPUT_DIR", "results")
    workers_raw = os.getenv(f"{prefix}SUBSET_NAS_WORKERS", "1")
    log_level = os.getenv(f"{prefix}SUBSET_NAS_LOG_LEVEL", "INFO").upper()

    try:
        workers = int(workers_raw)
    except ValueError:
        raise ConfigError(f"SUBSET_NAS_WORKERS must be an integer, got {workers_raw!r}")
    if workers < 1:
        raise ConfigError("SUBSET_NAS_WORKERS must be >= 1")
    if log_level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        raise ConfigError(f"Unsupported log level: {log_level}")

    return RuntimeConfig(output_dir=output_dir, workers=workers, log_level=log_level)
