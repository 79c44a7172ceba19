"""Ground-truth rankings of enumerable search spaces, cached by content hash."""
import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass
from datetime import datetime
from typing import Dict, List, Optional, Sequence

import numpy as np

from core.nn.supernet import Architecture, SearchSpace, SearchSpaceError
from core.services.search_service import train_final
from core.utils.data_utils import Dataset

logger = logging.getLogger(__name__)


@dataclass
class OracleEntry:
    index: int
    architecture: List[List]
    accuracies: List[float]
    mean_accuracy: float
    rank: int


@dataclass
class OracleRanking:
    """Every architecture of a space with its mean test accuracy; rank 1 is best."""
    space: str
    key: str
    epochs: int
    seeds: List[int]
    entries: List[OracleEntry]

    def rank_of(self, arch: Architecture) -> int:
        return self.entries[arch.enumeration_index()].rank

    def top_fraction(self, arch: Architecture) -> float:
        """Rank as a fraction of the space size (1 / |space| is the best)."""
        return self.rank_of(arch) / len(self.entries)

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "OracleRanking":
        return cls(
            space=data["space"],
            key=data["key"],
            epochs=int(data["epochs"]),
            seeds=[int(s) for s in data["seeds"]],
            entries=[OracleEntry(**e) for e in data["entries"]],
        )


def oracle_key(space: SearchSpace, dataset: Dataset, epochs: int, seeds: Sequence[int],
               train_kwargs: Optional[Dict] = None) -> str:
    """sha256 of the canonical JSON of everything the ranking depends on."""
    payload = {
        "space": space.to_dict(),
        "dataset": {"spec": asdict(dataset.spec), "seed": dataset.seed},
        "epochs": int(epochs),
        "seeds": [int(s) for s in seeds],
        "train": dict(sorted((train_kwargs or {}).items())),
    }
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class OracleCache:
    """Directory of rankings, one JSON file per content hash."""

    def __init__(self, directory: str):
        self.directory = directory

    def _path(self, key: str) -> str:
        return os.path.join(self.directory, f"{key}.json")

    def load(self, key: str) -> Optional[OracleRanking]:
        path = self._path(key)
        if not os.path.exists(path):
            return None
        try:
            with open(path, "r") as f:
                return OracleRanking.from_dict(json.load(f)["ranking"])
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            logger.warning("ignoring unreadable oracle cache entry %s: %s", path, e)
            return None

    def save(self, ranking: OracleRanking) -> str:
        os.makedirs(self.directory, exist_ok=True)
        path = self._path(ranking.key)
        with open(path, "w") as f:
            json.dump(
                {"created_at": datetime.now().isoformat(), "ranking": ranking.to_dict()},
                f,
                indent=2,
                sort_keys=True,
            )
        return path


def oracle_ranking(space: SearchSpace, dataset: Dataset, epochs: int, seeds: Sequence[int],
                   cache: Optional[OracleCache] = None, **train_kwargs) -> OracleRanking:
    """
    Train every architecture of ``space`` from scratch and rank by mean test accuracy.

    Args:
        space: An enumerable search space
        dataset: Data to train (train split) and score (test split) on
        epochs: Training epochs per architecture and seed
        seeds: Oracle seeds; accuracies are averaged over them
        cache: Optional cache; a hit skips all training
        **train_kwargs: Forwarded to train_final (lr, momentum, batch_size, schedule)

    Returns:
        OracleRanking: Ties in mean accuracy rank the lower enumeration index first
    """
    if not seeds:
        raise SearchSpaceError("oracle ranking needs at least one seed")
    key = oracle_key(space, dataset, epochs, seeds, train_kwargs)
    if cache is not None:
        cached = cache.load(key)
        if cached is not None:
            logger.info("oracle ranking for %s loaded from cache (%s)", space.name, key[:12])
            return cached

    archs = list(space.architectures())
    logger.info("training %d architectures x %d seeds for the %s oracle",
                len(archs), len(seeds), space.name)
    accuracies = []
    for arch in archs:
        accuracies.append([
            train_final(arch, dataset.X_train, dataset.y_train, dataset.X_test, dataset.y_test,
                        epochs, int(s), classes=dataset.classes, **train_kwargs)
            for s in seeds
        ])
    means = [float(np.mean(a)) for a in accuracies]
    order = sorted(range(len(archs)), key=lambda i: (-means[i], i))
    ranks = {i: r + 1 for r, i in enumerate(order)}
    entries = [
        OracleEntry(i, arch.to_pairs(), accuracies[i], means[i], ranks[i])
        for i, arch in enumerate(archs)
    ]
    ranking = OracleRanking(space.name, key, int(epochs), [int(s) for s in seeds], entries)
    if cache is not None:
        cache.save(ranking)
    return ranking
