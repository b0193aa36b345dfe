"""Multi-target terminal reward, path-midpoint shaping reward and the midpoint index."""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .kg import KnowledgeGraph, Relation


@dataclass(frozen=True)
class RewardConfig:
    T: int = 5
    eps: float = 1e-8

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not 0 < self.eps < 1:
            raise ValueError("eps must be in (0, 1)")


def log_sigmoid(x: float) -> float:
    return -float(np.logaddexp(0.0, -x))


def multi_target_reward(v_end: int, t_list, entity_vecs: np.ndarray, cfg: RewardConfig) -> float:
    """``T - position`` when the walk ends on one of the targets, otherwise the log-sigmoid
    similarity to the first target, floored at ``log(eps)``."""
    if len(t_list) == 0:
        raise ValueError("empty target list")
    targets = list(t_list)[: cfg.T]
    if v_end in targets:
        return float(cfg.T - targets.index(v_end))
    dot = float(np.dot(entity_vecs[v_end], entity_vecs[targets[0]]))
    return max(log_sigmoid(dot), float(np.log(cfg.eps)))


class MidpointIndex:
    """``index[(start, goal)]`` = set of (relation, entity) first hops from ``start`` that have
    some edge into ``goal``. Entries are computed on first access and memoized."""

    def __init__(self, graph: KnowledgeGraph):
        self.graph = graph
        self._entries: dict[tuple[int, int], frozenset[tuple[Relation, int]]] = {}
        self._out: dict[int, frozenset[int]] = {}
        self._lock = threading.Lock()

    def _out_neighbors(self, e: int) -> frozenset[int]:
        out = self._out.get(e)
        if out is None:
            out = frozenset(x for _, x in self.graph.neighbors(e))
            self._out[e] = out
        return out

    def __getitem__(self, key: tuple[int, int]) -> frozenset[tuple[Relation, int]]:
        entry = self._entries.get(key)
        if entry is not None:
            return entry
        start, goal = key
        entry = frozenset(
            (rel, mid) for rel, mid in self.graph.neighbors(start) if goal in self._out_neighbors(mid)
        )
        with self._lock:
            self._entries.setdefault(key, entry)
        return entry

    def __len__(self) -> int:
        return len(self._entries)

    def dump(self, path) -> None:
        """Debug TSV: start, goal, relation, midpoint."""
        with open(path, "w", encoding="utf-8") as fh:
            for (s, g) in sorted(self._entries):
                for rel, mid in sorted(self._entries[(s, g)], key=lambda x: (str(x[0]), x[1])):
                    fh.write(f"{s}\t{g}\t{rel}\t{mid}\n")


def build_midpoint_index(graph: KnowledgeGraph, starts, goals) -> MidpointIndex:
    index = MidpointIndex(graph)
    for s in starts:
        for g in goals:
            index[(s, g)]
    return index


def path_midpoint_reward(action: tuple[Relation, int], start: int, t_list, index: MidpointIndex, cfg: RewardConfig) -> float:
    """Largest ``T - i`` over targets ``i`` for which ``action`` is a midpoint from ``start``; 0 if none."""
    best = 0
    for i, goal in enumerate(list(t_list)[: cfg.T]):
        if action in index[(start, goal)]:
            best = max(best, cfg.T - i)
    return float(best)
