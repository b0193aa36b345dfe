"""Ranking metrics and the small-corpus experiment harness (ablations, sweeps)."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

DEFAULT_KS = (5, 10, 20)

# variant name -> config overrides; each variant removes one component
ABLATIONS = {
    "PR4SR": {},
    "PR4SR-Image": {"kg.use_images": False},
    "PR4SR-Merge_Edge": {"kg.merge_edges": False},
    "PR4SR-Session_Level_Agent": {"model.session_agent": False},
    "PR4SR-Midpoint_Reward": {"training.midpoint_reward": False},
    "PR4SR-Multi_Target_Reward": {"training.T": 1},
}
CSV_COLUMNS = ("variant", "k", "hr", "ndcg", "n", "seed")


def hit_rate(rank: int | None, k: int) -> int:
    """1 if the 1-based ``rank`` is within the top ``k``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return int(rank is not None and rank <= k)


def ndcg(rank: int | None, k: int) -> float:
    # one relevant item, so the ideal DCG is 1
    if k < 1:
        raise ValueError("k must be >= 1")
    if rank is None or rank > k:
        return 0.0
    return 1.0 / math.log2(rank + 1)


@dataclass
class MetricReport:
    hr: dict[int, float] = field(default_factory=dict)
    ndcg: dict[int, float] = field(default_factory=dict)
    n_instances: int = 0

    def rows(self, variant: str, seed: int) -> list[dict]:
        return [
            {"variant": variant, "k": k, "hr": self.hr[k], "ndcg": self.ndcg[k], "n": self.n_instances, "seed": seed}
            for k in sorted(self.hr)
        ]


def rank_of(target, ranked: Sequence) -> int | None:
    for i, item in enumerate(ranked):
        if item == target:
            return i + 1
    return None


def evaluate(ranker: Callable[[list], Sequence], instances, ks=DEFAULT_KS) -> MetricReport:
    """Average HR@k / NDCG@k of ``ranker(prefix)`` against each instance's first target.

    ``instances`` yields ``(prefix, t_list)`` pairs; the ranker returns item ids best first.
    """
    instances = list(instances)
    if not instances:
        raise ValueError("empty evaluation set")
    ks = tuple(sorted(set(ks)))
    hr = {k: 0.0 for k in ks}
    nd = {k: 0.0 for k in ks}
    for prefix, t_list in instances:
        rank = rank_of(t_list[0], ranker(list(prefix)))
        for k in ks:
            hr[k] += hit_rate(rank, k)
            nd[k] += ndcg(rank, k)
    n = len(instances)
    return MetricReport({k: v / n for k, v in hr.items()}, {k: v / n for k, v in nd.items()}, n)


def model_ranker(model, K: int, widths=None):
    from .inference import DEFAULT_WIDTHS, recommend

    widths = widths or DEFAULT_WIDTHS

    def rank(prefix):
        return [r.item for r in recommend(model, prefix, K, widths)]

    return rank


def write_report_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({**row, "hr": repr(float(row["hr"])), "ndcg": repr(float(row["ndcg"]))})


def run_ablation(run: Callable, base, seeds: Sequence[int] = (0,), variants=None, path=None) -> list[dict]:
    """Evaluate every ablation variant for every seed.

    ``base`` is a Config; ``run(config, seed)`` trains and returns a MetricReport.
    Rows follow the fixed CSV schema.
    """
    variants = variants or list(ABLATIONS)
    rows = []
    for name in variants:
        options = base.with_values(ABLATIONS[name])
        for seed in seeds:
            rows.extend(run(options, seed).rows(name, seed))
    if path is not None:
        write_report_csv(path, rows)
    return rows


def sweep(run: Callable, base, param: str, values: Sequence, seeds: Sequence[int] = (0,), path=None) -> list[dict]:
    """Sensitivity of the metrics to one option, e.g. ``sweep(run, base, "training.alpha", [0.01, 0.1])``."""
    rows = []
    for value in values:
        options = base.with_values({param: value})
        for seed in seeds:
            rows.extend(run(options, seed).rows(f"{param}={value}", seed))
    if path is not None:
        write_report_csv(path, rows)
    return rows
