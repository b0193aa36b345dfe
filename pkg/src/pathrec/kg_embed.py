"""Translational (TransE-style) pretraining of entity and relation vectors.

Only forward relations get a row; an inverse relation is the negated forward vector, so
``h + r ~ t`` and ``t + (-r) ~ h`` hold together.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kg import KnowledgeGraph, Relation
from .tensorio import load_tensors, save_tensors

logger = logging.getLogger(__name__)


@dataclass
class EmbeddingTable:
    entity_vecs: np.ndarray
    relation_vecs: np.ndarray
    relations: tuple[str, ...]
    loss_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        self._rel_id = {r: i for i, r in enumerate(self.relations)}

    @property
    def d(self) -> int:
        return self.entity_vecs.shape[1]

    def lookup(self, e: int) -> np.ndarray:
        if not 0 <= e < len(self.entity_vecs):
            raise IndexError(f"entity id {e} out of range [0, {len(self.entity_vecs)})")
        return self.entity_vecs[e]

    def lookup_rel(self, rel) -> np.ndarray:
        rel = Relation.parse(rel) if isinstance(rel, str) else rel
        if rel.name not in self._rel_id:
            raise KeyError(f"relation {rel.name!r} has no embedding")
        vec = self.relation_vecs[self._rel_id[rel.name]]
        return -vec if rel.inverse else vec

    def relation_codes_matrix(self) -> np.ndarray:
        """Rows indexed by graph relation code: forward rows, then their negations."""
        return np.vstack([self.relation_vecs, -self.relation_vecs])

    def save(self, path, index_path=None, registry=None) -> None:
        save_tensors(path, {"entity": self.entity_vecs, "relation": self.relation_vecs}, dtype="<f4")
        if index_path is not None:
            Path(index_path).parent.mkdir(parents=True, exist_ok=True)
            with open(index_path, "w", encoding="utf-8") as fh:
                for i in range(len(self.entity_vecs)):
                    key = registry.key(i) if registry is not None else str(i)
                    fh.write(f"entity\t{i}\t{key}\n")
                for i, name in enumerate(self.relations):
                    fh.write(f"relation\t{i}\t{name}\n")

    @classmethod
    def load(cls, path, index_path) -> "EmbeddingTable":
        tensors = load_tensors(path)
        relations = []
        with open(index_path, encoding="utf-8") as fh:
            for line in fh:
                section, _, name = line.rstrip("\n").split("\t", 2)
                if section == "relation":
                    relations.append(name)
        if len(relations) != len(tensors["relation"]):
            raise ValueError(f"{index_path}: {len(relations)} relation names for {len(tensors['relation'])} rows")
        return cls(tensors["entity"], tensors["relation"], tuple(relations))


def transe_loss(h, r, t, h_neg, t_neg, margin: float = 1.0) -> float:
    """Margin ranking loss ``max(0, margin + |h + r - t| - |h' + r - t'|)``."""
    vecs = [np.asarray(v, dtype=np.float64) for v in (h, r, t, h_neg, t_neg)]
    if len({v.shape for v in vecs}) != 1 or vecs[0].ndim != 1:
        raise ValueError(f"dimension mismatch: {[v.shape for v in vecs]}")
    if margin <= 0:
        raise ValueError("margin must be positive")
    h, r, t, h_neg, t_neg = vecs
    return float(max(0.0, margin + np.linalg.norm(h + r - t) - np.linalg.norm(h_neg + r - t_neg)))


def transe_grad(h, r, t, h_neg, t_neg, margin: float = 1.0) -> dict[str, np.ndarray]:
    """Analytic gradient of :func:`transe_loss` w.r.t. each argument vector."""
    h, r, t, h_neg, t_neg = (np.asarray(v, dtype=np.float64) for v in (h, r, t, h_neg, t_neg))
    pos = h + r - t
    neg = h_neg + r - t_neg
    zero = np.zeros_like(h)
    if margin + np.linalg.norm(pos) - np.linalg.norm(neg) <= 0:
        return {"h": zero, "r": zero, "t": zero, "h_neg": zero, "t_neg": zero}
    u = pos / max(np.linalg.norm(pos), 1e-12)
    w = neg / max(np.linalg.norm(neg), 1e-12)
    return {"h": u, "r": u - w, "t": -u, "h_neg": -w, "t_neg": w}


def _normalize_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    return mat / np.maximum(norms, 1e-12)


def init_table(n_entities: int, relations, d: int, rng: np.random.Generator) -> EmbeddingTable:
    bound = 6.0 / np.sqrt(d)
    ent = _normalize_rows(rng.uniform(-bound, bound, size=(n_entities, d)))
    rel = _normalize_rows(rng.uniform(-bound, bound, size=(len(relations), d)))
    return EmbeddingTable(ent, rel, tuple(relations))


def _batch_step(ent, rel, pos, neg, margin, lr):
    """One SGD step on a batch of (positive, corrupted) triples; returns per-triple losses."""
    h, r, t = pos[:, 0], pos[:, 1], pos[:, 2]
    hn, tn = neg[:, 0], neg[:, 2]
    dp = ent[h] + rel[r] - ent[t]
    dn = ent[hn] + rel[r] - ent[tn]
    np_, nn_ = np.linalg.norm(dp, axis=1), np.linalg.norm(dn, axis=1)
    losses = np.maximum(0.0, margin + np_ - nn_)
    active = losses > 0
    if active.any():
        u = dp[active] / np.maximum(np_[active], 1e-12)[:, None]
        w = dn[active] / np.maximum(nn_[active], 1e-12)[:, None]
        g_ent = np.zeros_like(ent)
        g_rel = np.zeros_like(rel)
        np.add.at(g_ent, h[active], u)
        np.add.at(g_ent, t[active], -u)
        np.add.at(g_ent, hn[active], -w)
        np.add.at(g_ent, tn[active], w)
        np.add.at(g_rel, r[active], u - w)
        ent -= lr * g_ent
        rel -= lr * g_rel
    return losses


def pretrain(
    graph: KnowledgeGraph,
    d: int = 100,
    epochs: int = 100,
    lr: float = 0.01,
    margin: float = 1.0,
    seed: int = 0,
    batch_size: int = 256,
) -> EmbeddingTable:
    """Train on forward triples with uniform head-or-tail corruption; entity rows are
    renormalized to unit length after every epoch."""
    if d <= 0:
        raise ValueError("embedding dimension must be positive")
    rng = np.random.default_rng(seed)
    table = init_table(graph.n_entities, graph.relations, d, rng)
    if not graph.triples or epochs <= 0:
        return table
    rel_id = {r: i for i, r in enumerate(graph.relations)}
    triples = np.array([(h, rel_id[r], t) for h, r, t in graph.triples], dtype=np.int64)
    ent, rel = table.entity_vecs, table.relation_vecs
    n = graph.n_entities
    for epoch in range(epochs):
        order = rng.permutation(len(triples))
        total = 0.0
        for start in range(0, len(order), batch_size):
            pos = triples[order[start:start + batch_size]]
            neg = pos.copy()
            corrupt_head = rng.random(len(pos)) < 0.5
            replacement = rng.integers(0, n, size=len(pos))
            neg[corrupt_head, 0] = replacement[corrupt_head]
            neg[~corrupt_head, 2] = replacement[~corrupt_head]
            total += float(_batch_step(ent, rel, pos, neg, margin, lr).sum())
        ent[:] = _normalize_rows(ent)
        table.loss_history.append(total / len(triples))
        if (epoch + 1) % 50 == 0:
            logger.info("transe epoch %d loss %.4f", epoch + 1, table.loss_history[-1])
    return table


def link_prediction_ranks(table: EmbeddingTable, graph: KnowledgeGraph) -> np.ndarray:
    """Raw 1-based rank of the true tail among all entities for each forward triple."""
    ent = table.entity_vecs
    ranks = []
    for h, r, t in graph.triples:
        dist = np.linalg.norm(ent[h] + table.lookup_rel(r) - ent, axis=1)
        ranks.append(1 + int(np.sum(dist < dist[t])))
    return np.array(ranks)
