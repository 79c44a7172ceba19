"""Multi-fidelity hyperparameter search: Hyperband, DEHB and BOHB.

Trials train a small MLP for a budget measured in epochs, either on the full
training set or on periodically refreshed GLISTER subsets.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from core.config import AdaptiveTrainerConfig, HpoConfig
from core.nn.ndgrad import MLP, MLPGraph, NdGradError
from core.selectors import SelectionContext, get_selector
from core.utils.data_utils import BatchStream, Dataset
from core.utils.random_utils import derive_seed, make_rng

logger = logging.getLogger(__name__)

FAILED_SCORE = float("-inf")


class HpoError(ValueError):
    """Invalid hyperparameter-search request or configuration vector."""
    pass


# Config space

@dataclass(frozen=True)
class Hyperparameter:
    """A native-range hyperparameter addressed through u in [0, 1]."""
    name: str
    kind: str
    low: float
    high: float

    def __post_init__(self):
        if self.kind not in ("int", "float", "log"):
            raise HpoError(f"unknown hyperparameter kind {self.kind!r}")
        if not self.low < self.high:
            raise HpoError(f"{self.name}: low must be below high")
        if self.kind == "log" and self.low <= 0:
            raise HpoError(f"{self.name}: log-scaled bounds must be positive")

    @property
    def levels(self) -> int:
        return int(self.high - self.low) + 1

    def decode(self, u: float):
        if self.kind == "int":
            return int(self.low) + min(int(math.floor(u * self.levels)), self.levels - 1)
        if self.kind == "float":
            return self.low + u * (self.high - self.low)
        return math.exp(math.log(self.low) + u * (math.log(self.high) - math.log(self.low)))

    def encode(self, value) -> float:
        if self.kind == "int":
            return (int(value) - int(self.low) + 0.5) / self.levels
        if self.kind == "float":
            return (value - self.low) / (self.high - self.low)
        return (math.log(value) - math.log(self.low)) / (math.log(self.high) - math.log(self.low))


@dataclass(frozen=True)
class ConfigSpace:
    params: Tuple[Hyperparameter, ...]

    @property
    def dim(self) -> int:
        return len(self.params)

    def decode(self, vector: Sequence[float]) -> Dict[str, Any]:
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.dim,):
            raise HpoError(f"config vector has shape {vector.shape}, expected ({self.dim},)")
        if not np.all(np.isfinite(vector)) or np.any(vector < 0) or np.any(vector > 1):
            raise HpoError(f"config vector {vector.tolist()} is outside [0, 1]^{self.dim}")
        return {p.name: p.decode(float(u)) for p, u in zip(self.params, vector)}

    def encode(self, values: Dict[str, Any]) -> np.ndarray:
        return np.array([p.encode(values[p.name]) for p in self.params])

    def sample(self, rng: np.random.Generator, n: int = 1) -> np.ndarray:
        return rng.random((n, self.dim))


def mlp_config_space() -> ConfigSpace:
    return ConfigSpace((
        Hyperparameter("width", "int", 4, 64),
        Hyperparameter("depth", "int", 1, 3),
        Hyperparameter("lr", "log", 1e-3, 0.5),
    ))


# Budgets

@dataclass(frozen=True)
class Bracket:
    s: int
    budgets: Tuple[float, ...]
    sizes: Tuple[int, ...]


@dataclass(frozen=True)
class BudgetSchedule:
    max_budget: float
    eta: int
    brackets: Tuple[Bracket, ...]

    @property
    def s_max(self) -> int:
        return len(self.brackets) - 1

    def population_sizes(self) -> Dict[float, int]:
        """Largest rung population seen at each budget."""
        sizes: Dict[float, int] = {}
        for bracket in self.brackets:
            for b, n in zip(bracket.budgets, bracket.sizes):
                sizes[b] = max(sizes.get(b, 0), n)
        return sizes


def hyperband_schedule(R: float, eta: int) -> BudgetSchedule:
    """Brackets s = s_max..0, each starting ceil((s_max + 1) / (s + 1)) * eta^s configs at R * eta^-s."""
    if R < 1:
        raise HpoError(f"max budget must be >= 1, got {R}")
    if eta < 2:
        raise HpoError(f"eta must be >= 2, got {eta}")
    s_max = 0
    while eta ** (s_max + 1) <= R:
        s_max += 1
    brackets = []
    for s in range(s_max, -1, -1):
        n = -(-(s_max + 1) // (s + 1)) * eta**s
        budgets = tuple(R / eta ** (s - i) for i in range(s + 1))
        sizes = tuple(n // eta**i for i in range(s + 1))
        brackets.append(Bracket(s, budgets, sizes))
    return BudgetSchedule(float(R), eta, tuple(brackets))


# Trials

@dataclass
class TrialRecord:
    config: List[float]
    budget: float
    score: float
    cost: float
    seed: int
    failed: bool = False
    refresh_events: List[int] = field(default_factory=list)
    hyperparameters: Optional[Dict[str, Any]] = None
    bracket: Optional[int] = None
    rung: Optional[int] = None

    def to_record(self) -> Dict[str, Any]:
        record = asdict(self)
        if self.failed:
            record["score"] = None
        return record


Evaluator = Callable[[np.ndarray, float, int], TrialRecord]


def _rank(records: Sequence[TrialRecord]) -> List[int]:
    """Positions sorted best-first; ties keep the lower position."""
    return sorted(range(len(records)), key=lambda i: (-records[i].score, i))


def evaluate_batch(evaluator: Evaluator, jobs: Sequence[Tuple[np.ndarray, float, int]],
                   workers: int = 1) -> List[TrialRecord]:
    """Evaluate jobs, possibly in threads; results come back in job order."""
    if workers <= 1 or len(jobs) <= 1:
        return [evaluator(c, b, s) for c, b, s in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: evaluator(*job), jobs))


def successive_halving(population: Sequence[np.ndarray], evaluator: Evaluator, eta: int,
                       budgets: Sequence[float], seed: int = 0, bracket: int = 0,
                       workers: int = 1) -> List[List[TrialRecord]]:
    """
    Evaluate a population rung by rung, keeping the best max(1, n // eta) each time.

    Args:
        population: Configuration vectors for the first rung
        evaluator: Called as evaluator(config, budget, seed)
        eta: Reduction factor between rungs
        budgets: One budget per rung, increasing
        seed: Mixed into each trial seed with the bracket, rung and slot
        bracket: Bracket index stamped on the records
        workers: Thread count for evaluating a rung

    Returns:
        Evaluated records per rung
    """
    if len(population) == 0:
        raise HpoError("successive halving needs a nonempty population")
    current = [np.asarray(c, dtype=np.float64) for c in population]
    rungs = []
    for i, budget in enumerate(budgets):
        jobs = [(c, budget, derive_seed(seed, "trial", bracket, i, j)) for j, c in enumerate(current)]
        records = evaluate_batch(evaluator, jobs, workers)
        for r in records:
            r.bracket, r.rung = bracket, i
        rungs.append(records)
        if i + 1 < len(budgets):
            keep = max(1, len(current) // eta)
            current = [current[j] for j in _rank(records)[:keep]]
    return rungs


def best_record(records: Sequence[TrialRecord]) -> TrialRecord:
    """Best score at the largest budget reached, earliest on ties."""
    if not records:
        raise HpoError("no trials were evaluated")
    top_budget = max(r.budget for r in records)
    pool = [r for r in records if r.budget == top_budget and not r.failed] or list(records)
    return pool[_rank(pool)[0]]


@dataclass
class HpoResult:
    best: TrialRecord
    trials: List[TrialRecord]

    @property
    def cost(self) -> float:
        return float(sum(t.cost for t in self.trials))


def hyperband_run(space: ConfigSpace, evaluator: Evaluator, schedule: BudgetSchedule,
                  seed: int, workers: int = 1) -> HpoResult:
    """Plain Hyperband with uniformly sampled configurations."""
    rng = make_rng(seed, "hyperband")
    trials: List[TrialRecord] = []
    for bracket in schedule.brackets:
        population = space.sample(rng, bracket.sizes[0])
        for rung in successive_halving(population, evaluator, schedule.eta, bracket.budgets,
                                       seed, bracket.s, workers):
            trials.extend(rung)
    return HpoResult(best_record(trials), trials)


# Differential evolution

def de_mutate(population: np.ndarray, F: float, rng: np.random.Generator,
              exclude: Optional[int] = None) -> np.ndarray:
    """rand/1: x_r1 + F (x_r2 - x_r3) with distinct donors, clipped to [0, 1]."""
    population = np.asarray(population, dtype=np.float64)
    if len(population) < 4:
        raise HpoError(f"rand/1 mutation needs a population of at least 4, got {len(population)}")
    candidates = [i for i in range(len(population)) if i != exclude]
    r1, r2, r3 = rng.choice(candidates, size=3, replace=False)
    mutant = population[r1] + F * (population[r2] - population[r3])
    return np.clip(mutant, 0.0, 1.0)


def de_crossover(target: np.ndarray, mutant: np.ndarray, p_cr: float,
                 rng: np.random.Generator) -> np.ndarray:
    """Binomial crossover with one coordinate always taken from the mutant."""
    if not 0.0 <= p_cr <= 1.0:
        raise HpoError(f"crossover probability must lie in [0, 1], got {p_cr}")
    target = np.asarray(target, dtype=np.float64)
    mask = rng.random(target.shape[0]) < p_cr
    mask[rng.integers(target.shape[0])] = True
    return np.where(mask, mutant, target)


@dataclass
class _Slot:
    config: np.ndarray
    score: float


class DEHB:
    """Differential evolution over per-budget subpopulations inside Hyperband brackets.

    Generation 0 is a plain Hyperband pass that seeds the subpopulations.
    Later generations mutate and cross over slot parents; a child replaces
    its parent only when its score is at least the parent's. The best slots
    of each rung become the donor pool of the next rung.
    """

    def __init__(self, space: ConfigSpace, evaluator: Evaluator, schedule: BudgetSchedule,
                 seed: int, F: float = 0.5, p_cr: float = 0.5, workers: int = 1):
        self.space = space
        self.evaluator = evaluator
        self.schedule = schedule
        self.seed = seed
        self.F = F
        self.p_cr = p_cr
        self.workers = workers
        self.rng = make_rng(seed, "dehb")
        self.pop_sizes = schedule.population_sizes()
        self.subpops: Dict[float, List[_Slot]] = {b: [] for b in self.pop_sizes}
        self.trials: List[TrialRecord] = []
        self.slot_history: List[Tuple[float, int, float, float]] = []

    def _archive(self) -> np.ndarray:
        return np.array([t.config for t in self.trials if not t.failed]).reshape(-1, self.space.dim)

    def _donors(self, pool: np.ndarray) -> np.ndarray:
        """Donor pool padded from the archive, then uniformly, to at least four members."""
        if len(pool) >= 4:
            return pool
        archive = self._archive()
        if len(archive):
            extra = archive[self.rng.choice(len(archive), size=min(len(archive), 4), replace=False)]
            pool = np.vstack([pool, extra]) if len(pool) else extra
        if len(pool) < 4:
            pool = np.vstack([pool, self.space.sample(self.rng, 4 - len(pool))]) if len(pool) \
                else self.space.sample(self.rng, 4)
        return pool

    def _initial_pass(self) -> None:
        for bracket in self.schedule.brackets:
            population = self.space.sample(self.rng, bracket.sizes[0])
            rungs = successive_halving(population, self.evaluator, self.schedule.eta,
                                       bracket.budgets, derive_seed(self.seed, "gen", 0),
                                       bracket.s, self.workers)
            for budget, records in zip(bracket.budgets, rungs):
                self.trials.extend(records)
                slots = self.subpops[budget]
                for r in records:
                    if len(slots) < self.pop_sizes[budget]:
                        slots.append(_Slot(np.asarray(r.config), r.score))

    def _evolve_rung(self, budget: float, size: int, donors: Optional[np.ndarray],
                     generation: int, bracket: int, rung: int) -> np.ndarray:
        slots = self.subpops[budget]
        own = np.array([s.config for s in slots])
        jobs = []
        for j in range(size):
            if donors is None:
                mutant = de_mutate(self._donors(own), self.F, self.rng, exclude=j if len(own) >= 4 else None)
            else:
                mutant = de_mutate(self._donors(donors), self.F, self.rng)
            child = de_crossover(slots[j].config, mutant, self.p_cr, self.rng)
            jobs.append((child, budget, derive_seed(self.seed, "gen", generation, bracket, rung, j)))
        records = evaluate_batch(self.evaluator, jobs, self.workers)
        for j, r in enumerate(records):
            r.bracket, r.rung = bracket, rung
            self.trials.append(r)
            before = slots[j].score
            if r.score >= slots[j].score:
                slots[j] = _Slot(np.asarray(r.config), r.score)
            self.slot_history.append((budget, j, before, slots[j].score))
        ranked = sorted(range(size), key=lambda j: (-slots[j].score, j))
        return np.array([slots[j].config for j in ranked])

    def run(self, generations: int) -> HpoResult:
        self._initial_pass()
        for g in range(1, generations + 1):
            for bracket in self.schedule.brackets:
                donors = None
                for i, (budget, size) in enumerate(zip(bracket.budgets, bracket.sizes)):
                    promoted = self._evolve_rung(budget, size, donors, g, bracket.s, i)
                    if i + 1 < len(bracket.sizes):
                        donors = promoted[: bracket.sizes[i + 1]]
            logger.info("dehb generation %d: best score %.4f", g, best_record(self.trials).score)
        return HpoResult(best_record(self.trials), self.trials)


def dehb_run(space: ConfigSpace, evaluator: Evaluator, schedule: BudgetSchedule,
             generations: int, seed: int, F: float = 0.5, p_cr: float = 0.5,
             workers: int = 1) -> HpoResult:
    return DEHB(space, evaluator, schedule, seed, F, p_cr, workers).run(generations)


# BOHB

def _scott_bandwidth(points: np.ndarray) -> np.ndarray:
    n, d = points.shape
    std = points.std(axis=0, ddof=1) if n > 1 else np.zeros(d)
    return np.maximum(std * n ** (-1.0 / (d + 4)), 1e-3)


def _kde_logpdf(x: np.ndarray, points: np.ndarray, bw: np.ndarray) -> np.ndarray:
    """Log density of a per-dimension Gaussian product KDE at each row of x."""
    per_dim = norm.logpdf(x[:, None, :], loc=points[None, :, :], scale=bw)
    return logsumexp(per_dim.sum(axis=2), axis=1) - np.log(len(points))


def bohb_sample(history: Sequence[Tuple[np.ndarray, float]], dim: int, gamma: float,
                min_points: Optional[int], rho: float, rng: np.random.Generator,
                num_candidates: int = 64) -> np.ndarray:
    """One configuration from the good/bad density-ratio model, or uniform.

    ``history`` holds (config, score) pairs at a single budget; failed trials
    with non-finite scores are ignored.
    """
    if not 0.0 < gamma < 1.0:
        raise HpoError(f"gamma must lie in (0, 1), got {gamma}")
    min_points = dim + 2 if min_points is None else min_points
    uniform = rng.random(dim)
    if rng.random() < rho:
        return uniform
    valid = [(np.asarray(c, dtype=np.float64), s) for c, s in history if np.isfinite(s)]
    if len(valid) < max(min_points, 2):
        return uniform

    order = sorted(range(len(valid)), key=lambda i: (-valid[i][1], i))
    n_good = min(max(1, int(math.ceil(gamma * len(valid)))), len(valid) - 1)
    configs = np.array([c for c, _ in valid])
    good = configs[order[:n_good]]
    bad = configs[order[n_good:]]
    bw_good = _scott_bandwidth(good)
    bw_bad = _scott_bandwidth(bad)

    centers = good[rng.integers(len(good), size=num_candidates)]
    candidates = np.clip(centers + bw_good * rng.standard_normal((num_candidates, dim)), 0.0, 1.0)
    ratio = _kde_logpdf(candidates, good, bw_good) - _kde_logpdf(candidates, bad, bw_bad)
    return candidates[int(np.argmax(ratio))]


class BOHB:
    """Hyperband whose brackets draw configurations from the density-ratio model.

    The model is fit at the largest budget that has at least ``min_points``
    finished trials.
    """

    def __init__(self, space: ConfigSpace, evaluator: Evaluator, schedule: BudgetSchedule,
                 seed: int, gamma: float = 0.15, min_points: Optional[int] = None,
                 rho: float = 1.0 / 3.0, num_candidates: int = 64, workers: int = 1):
        self.space = space
        self.evaluator = evaluator
        self.schedule = schedule
        self.seed = seed
        self.gamma = gamma
        self.min_points = space.dim + 2 if min_points is None else min_points
        self.rho = rho
        self.num_candidates = num_candidates
        self.workers = workers
        self.rng = make_rng(seed, "bohb")
        self.trials: List[TrialRecord] = []

    def _model_history(self) -> List[Tuple[np.ndarray, float]]:
        by_budget: Dict[float, List[Tuple[np.ndarray, float]]] = {}
        for t in self.trials:
            if not t.failed:
                by_budget.setdefault(t.budget, []).append((np.asarray(t.config), t.score))
        for budget in sorted(by_budget, reverse=True):
            if len(by_budget[budget]) >= self.min_points:
                return by_budget[budget]
        return []

    def run(self, iterations: int) -> HpoResult:
        for it in range(iterations):
            for bracket in self.schedule.brackets:
                history = self._model_history()
                population = [
                    bohb_sample(history, self.space.dim, self.gamma, self.min_points, self.rho,
                                self.rng, self.num_candidates)
                    for _ in range(bracket.sizes[0])
                ]
                rungs = successive_halving(population, self.evaluator, self.schedule.eta,
                                           bracket.budgets, derive_seed(self.seed, "iter", it),
                                           bracket.s, self.workers)
                for records in rungs:
                    self.trials.extend(records)
            logger.info("bohb iteration %d: best score %.4f", it, best_record(self.trials).score)
        return HpoResult(best_record(self.trials), self.trials)


def bohb_run(space: ConfigSpace, evaluator: Evaluator, schedule: BudgetSchedule,
             iterations: int, seed: int, gamma: float = 0.15, min_points: Optional[int] = None,
             rho: float = 1.0 / 3.0, num_candidates: int = 64, workers: int = 1) -> HpoResult:
    return BOHB(space, evaluator, schedule, seed, gamma, min_points, rho,
                num_candidates, workers).run(iterations)


# Trial evaluators

def budget_epochs(budget: float) -> int:
    return max(1, int(round(budget)))


def build_mlp(hp: Dict[str, Any], dataset: Dataset, seed: int) -> MLP:
    widths = (dataset.n_features,) + (int(hp["width"]),) * int(hp["depth"]) + (dataset.classes,)
    return MLP.create(MLPGraph(widths), derive_seed(seed, "init"))


def adaptive_evaluator(config: np.ndarray, budget: float, dataset: Dataset,
                       atc: AdaptiveTrainerConfig, seed: int, space: Optional[ConfigSpace] = None,
                       batch_size: int = 64, momentum: float = 0.9) -> TrialRecord:
    """Train the decoded MLP on refreshed subsets and score it on the validation split.

    Cost counts one unit per theta-step example plus the selector overhead.
    """
    space = space or mlp_config_space()
    config = np.asarray(config, dtype=np.float64)
    if budget < 1:
        raise HpoError(f"budget must be at least one epoch, got {budget}")
    try:
        hp = space.decode(config)
    except HpoError as e:
        logger.warning("trial config failed to decode: %s", e)
        return TrialRecord(config.tolist(), budget, FAILED_SCORE, 0.0, seed, failed=True)

    d = dataset
    model = build_mlp(hp, d, seed)
    n = len(d.y_train)
    k = max(1, int(math.floor(atc.fraction * n + 1e-9)))
    selector = (
        get_selector("full") if atc.fraction >= 1.0 and atc.selector == "full"
        else get_selector(atc.selector, **_selector_kwargs(atc))
    )
    data_rng = make_rng(seed, "data")
    selector_rng = make_rng(seed, "selector")

    epochs = budget_epochs(budget)
    steps_per_epoch = math.ceil(k / batch_size)
    cost = 0.0
    refreshes: List[int] = []
    stream = None
    weights = None
    try:
        for epoch in range(epochs):
            if epoch % atc.refresh_epochs == 0:
                ctx = SelectionContext(d.X_train, d.y_train, d.X_val, d.y_val, k, d.classes,
                                       selector_rng, model=model)
                selection = selector.select(ctx)
                cost += selection.overhead
                refreshes.append(epoch)
                stream = BatchStream(selection.indices, batch_size, data_rng)
                weights = None
                if selection.weights is not None:
                    weights = np.ones(n)
                    weights[selection.indices] = selection.weights
            for _ in range(steps_per_epoch):
                idx = stream.next_batch()
                model.train_step(d.X_train[idx], d.y_train[idx], float(hp["lr"]), momentum,
                                 None if weights is None else weights[idx])
                cost += len(idx)
        score = model.accuracy(d.X_val, d.y_val)
    except (NdGradError, FloatingPointError) as e:
        logger.warning("trial %s diverged: %s", hp, e)
        return TrialRecord(config.tolist(), budget, FAILED_SCORE, cost, seed, failed=True,
                           refresh_events=refreshes, hyperparameters=hp)

    return TrialRecord(
        config=config.tolist(),
        budget=budget,
        score=score,
        cost=cost,
        seed=seed,
        refresh_events=refreshes,
        hyperparameters=hp,
    )


def plain_evaluator(config: np.ndarray, budget: float, dataset: Dataset, seed: int,
                    space: Optional[ConfigSpace] = None, batch_size: int = 64,
                    momentum: float = 0.9) -> TrialRecord:
    """Full-data training: the adaptive evaluator with every point and no selector cost."""
    full = AdaptiveTrainerConfig(fraction=1.0, refresh_epochs=10**9, selector="full")
    return adaptive_evaluator(config, budget, dataset, full, seed, space, batch_size, momentum)


def final_test_accuracy(hp: Dict[str, Any], dataset: Dataset, epochs: int, seed: int,
                        batch_size: int = 64, momentum: float = 0.9) -> float:
    """Retrain ``hp`` from scratch on the whole training split and score the test split."""
    d = dataset
    model = build_mlp(hp, d, derive_seed(seed, "final"))
    stream = BatchStream(np.arange(len(d.y_train)), batch_size, make_rng(seed, "final-data"))
    for _ in range(max(0, epochs) * stream.steps_per_epoch):
        idx = stream.next_batch()
        model.train_step(d.X_train[idx], d.y_train[idx], float(hp["lr"]), momentum)
    return model.accuracy(d.X_test, d.y_test)


def _selector_kwargs(atc: AdaptiveTrainerConfig) -> Dict[str, Any]:
    if atc.selector == "glister":
        return {"eta": atc.glister_eta, "rounds": atc.glister_rounds}
    return {}


def make_evaluator(dataset: Dataset, atc: Optional[AdaptiveTrainerConfig] = None,
                   space: Optional[ConfigSpace] = None, batch_size: int = 64,
                   momentum: float = 0.9) -> Evaluator:
    """Bind a dataset (and an adaptive schedule, if any) into an Evaluator."""
    def evaluate(config: np.ndarray, budget: float, seed: int) -> TrialRecord:
        if atc is None:
            return plain_evaluator(config, budget, dataset, seed, space, batch_size, momentum)
        return adaptive_evaluator(config, budget, dataset, atc, seed, space, batch_size, momentum)
    return evaluate


def run_hpo(method: str, dataset: Dataset, cfg: HpoConfig, atc: AdaptiveTrainerConfig,
            seed: int, master_seed: int = 0) -> HpoResult:
    """
    Run one multi-fidelity search for a single seed.

    Args:
        method: hyperband, dehb or bohb, optionally prefixed with ``adaptive-``
            to train every trial on refreshed GLISTER subsets
        dataset: Splits the trials train and score on
        cfg: Bracket, DE and BOHB settings
        atc: Subset schedule used by the adaptive variants
        seed: Search seed; the method name is mixed in, not the prefix
        master_seed: Experiment-level seed

    Returns:
        HpoResult with every trial and the best one at the largest budget

    Raises:
        HpoError: If the method is unknown
    """
    adaptive = method.startswith("adaptive-")
    base = method[len("adaptive-"):] if adaptive else method
    if base not in ("hyperband", "dehb", "bohb"):
        raise HpoError(f"unknown hyperparameter search method {method!r}")
    space = mlp_config_space()
    evaluator = make_evaluator(dataset, atc if adaptive else None, space,
                               cfg.batch_size, cfg.momentum)
    schedule = hyperband_schedule(cfg.max_budget, cfg.eta)
    # config proposals ignore the method so adaptive and plain runs see the same streams
    run_seed = derive_seed(master_seed, seed, base)
    if base == "hyperband":
        return hyperband_run(space, evaluator, schedule, run_seed, cfg.workers)
    if base == "dehb":
        return dehb_run(space, evaluator, schedule, cfg.generations, run_seed,
                        cfg.mutation_factor, cfg.crossover_prob, cfg.workers)
    return bohb_run(space, evaluator, schedule, cfg.iterations, run_seed, cfg.gamma,
                    cfg.min_points, cfg.random_fraction, cfg.num_candidates, cfg.workers)
