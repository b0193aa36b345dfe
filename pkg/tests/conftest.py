from __future__ import annotations

import numpy as np
import pytest

from pathrec.kg import EntityRegistry, Triple, finalize
from pathrec.kg_embed import EmbeddingTable
from pathrec.model import ModelConfig, PathReasoner


def random_table(graph, d=4, seed=0) -> EmbeddingTable:
    rng = np.random.default_rng(seed)
    return EmbeddingTable(
        rng.normal(size=(graph.n_entities, d)), rng.normal(size=(graph.n_relations, d)), graph.relations
    )


def random_graph(n_products=8, n_users=3, n_brands=2, n_edges=20, seed=0):
    """Small connected-ish graph over products, users and brands."""
    rng = np.random.default_rng(seed)
    reg = EntityRegistry()
    products = [reg.add("product", f"p{i}") for i in range(n_products)]
    users = [reg.add("user", f"u{i}") for i in range(n_users)]
    brands = [reg.add("brand", f"b{i}") for i in range(n_brands)]
    triples = {Triple(p, "produced_by", brands[i % n_brands]) for i, p in enumerate(products)}
    while len(triples) < n_edges + n_products:
        kind = rng.integers(2)
        p = products[rng.integers(n_products)]
        if kind == 0:
            triples.add(Triple(users[rng.integers(n_users)], "purchase", p))
        else:
            q = products[rng.integers(n_products)]
            if q != p:
                triples.add(Triple(p, "co_occur", q))
    return finalize(sorted(triples), reg)


@pytest.fixture
def small_model():
    graph = random_graph()
    table = random_table(graph)
    return PathReasoner(graph, table, ModelConfig(d_se=3, d_proj=4, seed=0))
