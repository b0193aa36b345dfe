"""Session-level and path-level policies over the knowledge graph.

Both policies score candidates bilinearly, ``(W_a a) . (W_s s)``, and normalize with a
softmax. The long walk (from the item picked by the session agent) and the short walk
(from the last session item) share W3/W4.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .kg import GraphError, KnowledgeGraph, Relation
from .kg_embed import EmbeddingTable

PATH_LENGTH = 2


class Embeddings:
    """Frozen torch view of an :class:`EmbeddingTable`; relations indexed by graph code."""

    def __init__(self, table: EmbeddingTable, graph: KnowledgeGraph | None = None):
        if graph is not None and tuple(graph.relations) != tuple(table.relations):
            raise ValueError("embedding table relations do not match the graph")
        self.table = table
        self.ent = torch.as_tensor(table.entity_vecs, dtype=torch.float64)
        self.rel = torch.as_tensor(table.relation_codes_matrix(), dtype=torch.float64)
        self.d = table.d


@dataclass
class PathState:
    s_se: torch.Tensor
    s_start: torch.Tensor
    s_curr: torch.Tensor
    t: int = 0

    def __post_init__(self):
        if not 0 <= self.t <= PATH_LENGTH:
            raise ValueError(f"step counter {self.t} outside [0, {PATH_LENGTH}]")


@dataclass
class ActionSpace:
    codes: np.ndarray
    tails: np.ndarray

    def __len__(self) -> int:
        return len(self.tails)

    def pairs(self, graph: KnowledgeGraph) -> list[tuple[Relation, int]]:
        return [(graph.relation_of(int(c)), int(e)) for c, e in zip(self.codes, self.tails)]

    def subset(self, keep) -> "ActionSpace":
        return ActionSpace(self.codes[keep], self.tails[keep])


class PolicyParams(nn.Module):
    """W1/W2 score session items, W3/W4 score (relation, entity) actions; v_se/v_path are
    linear value heads over the session state and the path state."""

    def __init__(self, d: int, d_se: int, d_proj: int | None = None, seed: int = 0):
        super().__init__()
        d_proj = d_proj or d
        self.d, self.d_se, self.d_proj = d, d_se, d_proj
        gen = torch.Generator().manual_seed(seed)

        def mat(rows, cols):
            return nn.Parameter(torch.randn(rows, cols, generator=gen, dtype=torch.float64) / np.sqrt(cols))

        self.W1 = mat(d_proj, d)
        self.W2 = mat(d_proj, d_se)
        self.W3 = mat(d_proj, 2 * d)
        self.W4 = mat(d_proj, d_se + 2 * d)
        self.v_se = nn.Parameter(torch.zeros(d_se, dtype=torch.float64))
        self.v_path = nn.Parameter(torch.zeros(d_se + 2 * d, dtype=torch.float64))

    @property
    def state_dim(self) -> int:
        return self.d_se + 2 * self.d


def assemble_state(s_se, s_start, s_curr, dims: tuple[int, int] | None = None) -> torch.Tensor:
    """Concatenate (session, start entity, current entity) along the last axis."""
    s_se, s_start, s_curr = (torch.as_tensor(v, dtype=torch.float64) for v in (s_se, s_start, s_curr))
    if s_start.shape[-1] != s_curr.shape[-1]:
        raise ValueError(f"start/current dims differ: {s_start.shape[-1]} vs {s_curr.shape[-1]}")
    if dims is not None and (s_se.shape[-1], s_start.shape[-1]) != tuple(dims):
        raise ValueError(f"expected dims {dims}, got {(s_se.shape[-1], s_start.shape[-1])}")
    return torch.cat([s_se, s_start, s_curr], dim=-1)


def session_logits(params: PolicyParams, s_se: torch.Tensor, cand_vecs: torch.Tensor) -> torch.Tensor:
    # cand_vecs [..., C, d], s_se [..., d_se] -> [..., C]
    return ((cand_vecs @ params.W1.T) * (s_se @ params.W2.T)[..., None, :]).sum(-1)


def session_policy(params: PolicyParams, s_se, candidates, emb: Embeddings) -> torch.Tensor:
    """Probability of starting the long walk from each candidate session item."""
    if len(candidates) == 0:
        raise ValueError("session policy needs at least one candidate")
    vecs = emb.ent[torch.as_tensor(list(candidates), dtype=torch.long)]
    return F.softmax(session_logits(params, torch.as_tensor(s_se, dtype=torch.float64), vecs), dim=-1)


def action_vectors(actions: ActionSpace, emb: Embeddings) -> torch.Tensor:
    codes = torch.as_tensor(actions.codes, dtype=torch.long)
    tails = torch.as_tensor(actions.tails, dtype=torch.long)
    return torch.cat([emb.rel[codes], emb.ent[tails]], dim=-1)


def path_logits(params: PolicyParams, state_vec: torch.Tensor, act_vecs: torch.Tensor) -> torch.Tensor:
    # act_vecs [..., A, 2d], state_vec [..., d_se + 2d] -> [..., A]
    return ((act_vecs @ params.W3.T) * (state_vec @ params.W4.T)[..., None, :]).sum(-1)


def path_policy(params: PolicyParams, state: PathState, actions: ActionSpace, emb: Embeddings) -> torch.Tensor:
    """Distribution over ``actions`` from ``state``."""
    if len(actions) == 0:
        raise ValueError("path policy needs at least one action")
    state_vec = assemble_state(state.s_se, state.s_start, state.s_curr)
    return F.softmax(path_logits(params, state_vec, action_vectors(actions, emb)), dim=-1)


def value(params: PolicyParams, state_vec, level: str) -> torch.Tensor:
    head = {"session": params.v_se, "path": params.v_path}[level]
    state_vec = torch.as_tensor(state_vec, dtype=torch.float64)
    if state_vec.shape[-1] != head.shape[0]:
        raise ValueError(f"{level} value head expects dim {head.shape[0]}, got {state_vec.shape[-1]}")
    return state_vec @ head


def build_action_space(
    graph: KnowledgeGraph,
    current: int,
    table: EmbeddingTable,
    a_max: int = 200,
    train_mode: bool = False,
    dropout: float = 0.7,
    rng: np.random.Generator | None = None,
) -> ActionSpace:
    """Outgoing edges of ``current`` ranked by translational plausibility, capped at ``a_max``.

    Ties keep adjacency order, i.e. (relation name, entity index). In training mode each
    action is dropped with probability ``dropout``; the most plausible one always survives.
    """
    codes, tails = graph.edge_arrays(current)
    if len(tails) == 0:
        raise GraphError(f"entity {graph.registry.key(current)} has no edges")
    ent = table.entity_vecs
    rel = table.relation_codes_matrix()
    plaus = -np.linalg.norm(ent[current] + rel[codes] - ent[tails], axis=1)
    order = np.argsort(-plaus, kind="stable")[:a_max]
    space = ActionSpace(codes[order], tails[order])
    if train_mode:
        space = drop_actions(space, dropout, rng)
    return space


def drop_actions(space: ActionSpace, dropout: float, rng) -> ActionSpace:
    if dropout <= 0 or len(space) <= 1:
        return space
    keep = rng.random(len(space)) >= dropout
    keep[0] = True
    return space.subset(keep)


class ActionSpaces:
    """Memoized evaluation-mode action spaces for a frozen graph and embedding table."""

    def __init__(self, graph: KnowledgeGraph, table: EmbeddingTable, a_max: int = 200):
        self.graph, self.table, self.a_max = graph, table, a_max
        self._cache: dict[int, ActionSpace] = {}

    def get(self, e: int) -> ActionSpace:
        space = self._cache.get(e)
        if space is None:
            space = build_action_space(self.graph, e, self.table, self.a_max)
            self._cache[e] = space
        return space

    def sample(self, e: int, dropout: float, rng) -> ActionSpace:
        return drop_actions(self.get(e), dropout, rng)
