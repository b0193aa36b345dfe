"""Beam search over trained policies and explainable top-K recommendation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .agents import PathState, action_vectors, assemble_state, path_logits, session_policy
from .kg import EntityRegistry, GraphError, Relation
from .model import PathReasoner
from .session_encoder import encode
from .trainer import unique_in_order

DEFAULT_WIDTHS = (100, 1)


@dataclass(frozen=True)
class ReasonPath:
    start: int
    hops: tuple[tuple[Relation, int], ...]
    log_prob: float

    @property
    def terminal(self) -> int:
        return self.hops[-1][1]

    def to_json(self, registry: EntityRegistry | None = None) -> dict:
        name = (lambda e: registry.key(e)) if registry is not None else (lambda e: e)
        return {
            "start": name(self.start),
            "hops": [
                {"rel": rel.name, "dir": "inverse" if rel.inverse else "forward", "entity": name(e)}
                for rel, e in self.hops
            ],
            "terminal": name(self.terminal),
            "log_prob": self.log_prob,
        }


@dataclass(frozen=True)
class Recommendation:
    item: int
    score: float
    origin: str
    best_path: ReasonPath | None = None

    def to_json(self, registry: EntityRegistry | None = None) -> dict:
        return {
            "item": registry.names[self.item] if registry is not None else self.item,
            "score": self.score,
            "origin": self.origin,
            "path": self.best_path.to_json(registry) if self.best_path is not None else None,
        }


def _step_log_probs(model: PathReasoner, s_se, start: int, current: int):
    space = model.actions.get(current)
    state = PathState(s_se, model.emb.ent[start], model.emb.ent[current])
    vec = assemble_state(state.s_se, state.s_start, state.s_curr)
    logp = F.log_softmax(path_logits(model.policy, vec, action_vectors(space, model.emb)), dim=-1).numpy()
    return space, logp


def _top(model: PathReasoner, space, logp: np.ndarray, width: int, rng=None) -> list[int]:
    if rng is not None:
        # sampling mode: seeded draws without replacement instead of the top-k cut
        p = np.exp(logp - logp.max())
        return [int(i) for i in rng.choice(len(p), size=min(width, int(np.count_nonzero(p))), replace=False, p=p / p.sum())]
    rel_names = [str(model.graph.relation_of(int(c))) for c in space.codes]
    order = sorted(range(len(logp)), key=lambda i: (-logp[i], rel_names[i], int(space.tails[i])))
    return order[:width]


@torch.no_grad()
def beam_search(model: PathReasoner, s_se: torch.Tensor, start: int, widths=DEFAULT_WIDTHS, rng=None) -> list[ReasonPath]:
    """Length-2 walks from ``start`` keeping ``widths[t]`` best actions per node at step ``t``.

    Uses evaluation-mode action spaces (no dropout). Path log-probabilities are the sums of
    the two step log-probabilities. With ``rng`` the kept actions are drawn from the policy
    instead.
    """
    if len(widths) != 2:
        raise ValueError("beam search needs exactly two widths (path length 2)")
    space1, logp1 = _step_log_probs(model, s_se, start, start)
    paths = []
    for i in _top(model, space1, logp1, widths[0], rng):
        rel1, e1 = model.graph.relation_of(int(space1.codes[i])), int(space1.tails[i])
        space2, logp2 = _step_log_probs(model, s_se, start, e1)
        for j in _top(model, space2, logp2, widths[1], rng):
            rel2, e2 = model.graph.relation_of(int(space2.codes[j])), int(space2.tails[j])
            paths.append(ReasonPath(start, ((rel1, e1), (rel2, e2)), float(logp1[i] + logp2[j])))
    return paths


@torch.no_grad()
def choose_long_start(model: PathReasoner, s_se: torch.Tensor, prefix) -> int:
    """Session-agent argmax over the distinct prefix items (first wins ties)."""
    candidates = unique_in_order(prefix)
    probs = session_policy(model.policy, s_se, candidates, model.emb).numpy()
    return candidates[int(np.argmax(probs))]


@torch.no_grad()
def recommend(model: PathReasoner, prefix, K: int = 20, widths=DEFAULT_WIDTHS, sample_seed: int | None = None) -> list[Recommendation]:
    """Top-K items for a prefix of item entity ids.

    Path-backed items (best path probability over the long and short walks) come first;
    remaining slots are filled from encoder logits. Prefix items are never recommended.
    ``sample_seed`` switches the beam to seeded sampling.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    rng = np.random.default_rng(sample_seed) if sample_seed is not None else None
    prefix = [int(p) for p in prefix]
    state = encode(model.encoder, prefix)
    s_se = state.s_se
    starts = []
    if model.cfg.session_agent:
        starts.append(("long", choose_long_start(model, s_se, prefix)))
    starts.append(("short", prefix[-1]))

    seen = set(prefix)
    best: dict[int, Recommendation] = {}
    for origin, start in starts:
        try:
            paths = beam_search(model, s_se, start, widths, rng)
        except GraphError:
            continue
        for path in paths:
            item = path.terminal
            if item in seen or not model.graph.is_item(item):
                continue
            score = math.exp(path.log_prob)
            current = best.get(item)
            if current is None or score > current.score:
                best[item] = Recommendation(item, score, origin, path)

    ranked = sorted(best.values(), key=lambda r: (-r.score, r.item))[:K]
    if len(ranked) < K:
        taken = seen | {r.item for r in ranked}
        scores = state.item_scores.numpy()
        items = model.encoder.items
        for v in sorted(range(len(items)), key=lambda v: (-scores[v], items[v])):
            if len(ranked) == K:
                break
            if items[v] not in taken:
                ranked.append(Recommendation(items[v], float(scores[v]), "fallback"))
    return ranked


def render_explanation(path: ReasonPath, registry: EntityRegistry, mode: str = "text") -> str:
    """Arrow notation keeping each stored edge's original direction, or JSON."""
    if mode == "json":
        return json.dumps(path.to_json(registry), sort_keys=True)
    parts = [registry.names[path.start]]
    for rel, e in path.hops:
        arrow = f"<--{rel.name}--" if rel.inverse else f"--{rel.name}-->"
        parts.append(f"{arrow} {registry.names[e]}")
    return " ".join(parts)


def explain_session(model: PathReasoner, prefix_names, K: int = 5, widths=DEFAULT_WIDTHS, sample_seed=None) -> list[str]:
    registry = model.graph.registry
    recs = recommend(model, model.entity_ids(prefix_names), K, widths, sample_seed)
    lines = []
    for rank, rec in enumerate(recs, start=1):
        how = render_explanation(rec.best_path, registry) if rec.best_path else "(encoder score, no path)"
        lines.append(f"{rank}. {registry.names[rec.item]} [{rec.origin}, {rec.score:.4g}] {how}")
    return lines
