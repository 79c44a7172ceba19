"""Summary tables over JSONL run records."""
import csv
import math
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from core.config import METHODS

# full-data baseline each method's cost is compared against
BASELINES = {
    "darts": "darts-pt",
    "random": "darts-pt",
    "fl": "darts-pt",
    "entropy": "darts-pt",
    "glister": "darts-pt",
    "gradmatch": "darts-pt",
    "adaptive-hyperband": "hyperband",
    "adaptive-dehb": "dehb",
    "adaptive-bohb": "bohb",
}

REPORT_COLUMNS = ["method", "percent_data", "runs", "accuracy", "mean_accuracy", "std_accuracy",
                  "mean_cost", "cost_ratio", "mean_oracle_rank"]


class ReportError(ValueError):
    """Records cannot be summarised."""
    pass


def mean_std(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    if not values:
        raise ReportError("cannot summarise an empty group")
    mean = math.fsum(values) / len(values)
    if len(values) == 1:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in values) / (len(values) - 1)
    return mean, math.sqrt(var)


def _method_order(method: str) -> Tuple[int, str]:
    return (METHODS.index(method) if method in METHODS else len(METHODS), method)


def report(records: Iterable[Dict]) -> List[Dict[str, str]]:
    """
    One row per (method, data fraction) with accuracies in percent.

    Args:
        records: Run records as written by run_experiment

    Returns:
        List of rows keyed by REPORT_COLUMNS. ``cost_ratio`` is baseline cost
        over method cost (10.00 means ten times cheaper) and is empty when the
        baseline is absent from ``records``.
    """
    groups: Dict[Tuple[str, float], List[Dict]] = {}
    for r in records:
        groups.setdefault((r["method"], float(r.get("fraction", 1.0))), []).append(r)
    if not groups:
        raise ReportError("no records to report")

    costs: Dict[str, float] = {}
    for (method, _), rows in groups.items():
        if method not in BASELINES:
            costs.setdefault(method, mean_std([float(r["cost"]) for r in rows])[0])

    out = []
    for method, fraction in sorted(groups, key=lambda g: (_method_order(g[0]), g[1])):
        rows = groups[(method, fraction)]
        acc_mean, acc_std = mean_std([100.0 * float(r["test_accuracy"]) for r in rows])
        cost = mean_std([float(r["cost"]) for r in rows])[0]
        baseline = costs.get(BASELINES.get(method, method))
        ratio = "" if baseline is None or cost <= 0 else f"{baseline / cost:.2f}"
        ranks = [r["oracle_rank"] for r in rows if r.get("oracle_rank") is not None]
        out.append({
            "method": method,
            "percent_data": f"{100.0 * fraction:.0f}",
            "runs": str(len(rows)),
            "accuracy": f"{acc_mean:.2f} ± {acc_std:.2f}",
            "mean_accuracy": f"{acc_mean:.2f}",
            "std_accuracy": f"{acc_std:.2f}",
            "mean_cost": f"{cost:.1f}",
            "cost_ratio": ratio,
            "mean_oracle_rank": f"{mean_std(ranks)[0]:.2f}" if ranks else "",
        })
    return out


def write_csv(rows: List[Dict], path: str, columns: Optional[List[str]] = None) -> None:
    columns = columns or (list(rows[0]) if rows else REPORT_COLUMNS)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)
