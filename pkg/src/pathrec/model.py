"""Bundle of everything a trained recommender needs, plus checkpoint I/O."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .agents import ActionSpaces, Embeddings, PolicyParams
from .kg import KnowledgeGraph
from .kg_embed import EmbeddingTable
from .rewards import MidpointIndex
from .session_encoder import SessionEncoder
from .tensorio import load_tensors, save_tensors


@dataclass
class ModelConfig:
    d_se: int = 100
    d_proj: int = 100
    encoder: str = "gru"
    a_max: int = 200
    session_agent: bool = True
    seed: int = 0


class PathReasoner(nn.Module):
    """Session encoder and policy parameters over a frozen graph and embedding table."""

    def __init__(self, graph: KnowledgeGraph, table: EmbeddingTable, cfg: ModelConfig | None = None):
        super().__init__()
        self.cfg = cfg or ModelConfig()
        self.graph = graph
        self.table = table
        self.emb = Embeddings(table, graph)
        self.encoder = SessionEncoder(graph.items(), self.cfg.d_se, self.cfg.encoder, seed=self.cfg.seed)
        self.policy = PolicyParams(table.d, self.cfg.d_se, self.cfg.d_proj, seed=self.cfg.seed + 1)
        self.actions = ActionSpaces(graph, table, self.cfg.a_max)
        self.midpoints = MidpointIndex(graph)

    def entity_ids(self, names) -> list[int]:
        return [self.graph.registry.item(n) for n in names]

    def save(self, path, extra: dict | None = None) -> None:
        path = Path(path)
        tensors = {k: v.detach().cpu().numpy() for k, v in self.state_dict().items()}
        save_tensors(path, tensors, dtype="<f8")
        meta = {"model": asdict(self.cfg), **(extra or {})}
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path, graph: KnowledgeGraph, table: EmbeddingTable) -> "PathReasoner":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        model = cls(graph, table, ModelConfig(**meta["model"]))
        tensors = load_tensors(path)
        state = {k: torch.from_numpy(np.array(v)) for k, v in tensors.items()}
        model.load_state_dict(state)
        return model
