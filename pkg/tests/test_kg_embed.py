from __future__ import annotations

import numpy as np
import pytest

from pathrec.kg import EntityRegistry, Relation, Triple, finalize
from pathrec.kg_embed import (
    EmbeddingTable,
    init_table,
    link_prediction_ranks,
    pretrain,
    transe_grad,
    transe_loss,
)
from pathrec.tensorio import ContainerError, load_tensors, save_tensors


def chain_graph(n=4):
    reg = EntityRegistry()
    ids = [reg.add("product", f"p{i}") for i in range(n)]
    return finalize([Triple(a, "co_occur", b) for a, b in zip(ids, ids[1:])], reg)


def toy_graph(n_triples=20, seed=0):
    rng = np.random.default_rng(seed)
    reg = EntityRegistry()
    products = [reg.add("product", f"p{i}") for i in range(8)]
    brands = [reg.add("brand", f"b{i}") for i in range(3)]
    users = [reg.add("user", f"u{i}") for i in range(3)]
    triples = set()
    while len(triples) < n_triples:
        kind = rng.integers(3)
        p = products[rng.integers(8)]
        if kind == 0:
            triples.add(Triple(p, "produced_by", brands[rng.integers(3)]))
        elif kind == 1:
            triples.add(Triple(users[rng.integers(3)], "purchase", p))
        else:
            q = products[rng.integers(8)]
            if q != p:
                triples.add(Triple(p, "co_occur", q))
    return finalize(sorted(triples), reg)


def test_satisfied_margin_is_zero():
    h, r = np.array([0.0, 0.0]), np.array([1.0, 0.0])
    t = h + r
    assert transe_loss(h, r, t, np.array([0.0, 0.0]), np.array([3.0, 0.0]), 1.0) == 0.0


def test_identical_triples_give_margin():
    v = np.array([0.3, -0.2, 0.5])
    assert transe_loss(v, v, v, v, v, margin=0.7) == pytest.approx(0.7)


def test_scalar_case():
    # d=1: |0+0-1| = 1, |0+0-0| = 0, so max(0, 1 + 1 - 0) = 2
    z, one = np.zeros(1), np.ones(1)
    assert transe_loss(z, z, one, z, z, 1.0) == 2.0


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        transe_loss(np.zeros(2), np.zeros(3), np.zeros(2), np.zeros(2), np.zeros(2))
    with pytest.raises(ValueError):
        transe_loss(np.zeros(2), np.zeros(2), np.zeros(2), np.zeros(2), np.zeros(2), margin=0.0)


def numeric_grad(args, name, margin, eps=1e-6):
    names = ["h", "r", "t", "h_neg", "t_neg"]
    k = names.index(name)
    g = np.zeros_like(args[k])
    for i in range(len(g)):
        up = [a.copy() for a in args]
        dn = [a.copy() for a in args]
        up[k][i] += eps
        dn[k][i] -= eps
        g[i] = (transe_loss(*up, margin=margin) - transe_loss(*dn, margin=margin)) / (2 * eps)
    return g


def test_transe_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    checked = 0
    while checked < 10:
        args = [rng.normal(size=6) for _ in range(5)]
        if transe_loss(*args, margin=2.0) < 0.1:
            continue  # stay away from the hinge
        analytic = transe_grad(*args, margin=2.0)
        for name in analytic:
            num = numeric_grad(args, name, 2.0)
            rel = np.linalg.norm(num - analytic[name]) / max(np.linalg.norm(num), 1e-12)
            assert rel <= 1e-4
        checked += 1


def test_inactive_hinge_has_zero_gradient():
    h, r = np.zeros(2), np.array([1.0, 0.0])
    g = transe_grad(h, r, h + r, h, np.array([5.0, 5.0]))
    assert all(np.all(v == 0) for v in g.values())


def test_zero_epochs_is_initialization():
    g = toy_graph()
    table = pretrain(g, d=8, epochs=0, seed=3)
    init = init_table(g.n_entities, g.relations, 8, np.random.default_rng(3))
    assert np.array_equal(table.entity_vecs, init.entity_vecs)
    assert np.array_equal(table.lookup(2), init.entity_vecs[2])


def test_same_seed_same_table():
    g = toy_graph()
    a, b = pretrain(g, d=8, epochs=5, seed=1), pretrain(g, d=8, epochs=5, seed=1)
    assert np.array_equal(a.entity_vecs, b.entity_vecs)
    assert np.array_equal(a.relation_vecs, b.relation_vecs)


def test_d_must_be_positive():
    with pytest.raises(ValueError):
        pretrain(toy_graph(), d=0)


def test_chain_link_prediction_beats_random():
    g = chain_graph(4)
    table = pretrain(g, d=16, epochs=200, lr=0.05, seed=0)
    random_mean_rank = (g.n_entities + 1) / 2  # 2.5
    assert link_prediction_ranks(table, g).mean() < random_mean_rank


@pytest.mark.parametrize("epochs", [1, 3])
def test_entity_rows_unit_norm(epochs):
    table = pretrain(toy_graph(), d=8, epochs=epochs, seed=0)
    norms = np.linalg.norm(table.entity_vecs, axis=1)
    assert np.all(np.abs(norms - 1) <= 1e-6)


def test_loss_decreases_on_toy_graph():
    table = pretrain(toy_graph(20), d=16, epochs=200, lr=0.01, seed=0)
    assert table.loss_history[-1] < table.loss_history[0]


def test_lookup_rel_inverse_is_negation():
    table = pretrain(toy_graph(), d=8, epochs=1, seed=0)
    assert np.array_equal(table.lookup_rel("purchase_inverse"), -table.lookup_rel("purchase"))
    assert np.array_equal(table.lookup_rel(Relation("purchase", True)), -table.lookup_rel(Relation("purchase")))
    with pytest.raises(IndexError):
        table.lookup(10**6)


def test_table_file_round_trip(tmp_path):
    g = toy_graph()
    table = pretrain(g, d=8, epochs=2, seed=0)
    table.save(tmp_path / "emb.bin", tmp_path / "emb.tsv", g.registry)
    loaded = EmbeddingTable.load(tmp_path / "emb.bin", tmp_path / "emb.tsv")
    assert loaded.relations == table.relations
    np.testing.assert_allclose(loaded.entity_vecs, table.entity_vecs, atol=1e-6)
    first = (tmp_path / "emb.bin").read_bytes()
    table.save(tmp_path / "emb.bin", tmp_path / "emb.tsv", g.registry)
    assert (tmp_path / "emb.bin").read_bytes() == first
    lines = (tmp_path / "emb.tsv").read_text().splitlines()
    assert lines[0] == "entity\t0\tproduct:p0"


def test_container_float64_and_errors(tmp_path):
    x = np.arange(6, dtype=np.float64).reshape(2, 3) / 7
    save_tensors(tmp_path / "t.bin", {"x": x}, dtype="<f8")
    assert np.array_equal(load_tensors(tmp_path / "t.bin")["x"], x)
    (tmp_path / "bad.bin").write_bytes(b"NOPE" + bytes(10))
    with pytest.raises(ContainerError):
        load_tensors(tmp_path / "bad.bin")
