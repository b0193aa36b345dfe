from __future__ import annotations

import json
import math

import numpy as np
import pytest
import torch

from pathrec.inference import ReasonPath, beam_search, explain_session, recommend, render_explanation
from pathrec.kg import EntityRegistry, GraphError, Relation, Triple, finalize
from pathrec.model import ModelConfig, PathReasoner
from pathrec.session_encoder import encode

from conftest import random_graph, random_table


def uniform(model):
    with torch.no_grad():
        model.policy.W3.zero_()
        model.policy.W1.zero_()
    return model


def star_model():
    # user hub with 4 products; p0 and p1 also have a brand, so their degrees differ
    reg = EntityRegistry()
    hub = reg.add("user", "u")
    ps = [reg.add("product", f"p{i}") for i in range(4)]
    brand = reg.add("brand", "b")
    triples = [Triple(hub, "purchase", p) for p in ps]
    triples += [Triple(ps[0], "produced_by", brand), Triple(ps[1], "produced_by", brand)]
    graph = finalize(triples, reg)
    model = PathReasoner(graph, random_table(graph, d=3), ModelConfig(d_se=2, d_proj=3))
    return uniform(model), hub, ps


def test_star_beam_uniform_policy():
    model, hub, ps = star_model()
    s_se = torch.zeros(2, dtype=torch.float64)
    paths = beam_search(model, s_se, hub, (2, 1))
    assert len(paths) == 2
    for path in paths:
        deg2 = len(model.graph.neighbors(path.hops[0][1]))
        assert path.log_prob == pytest.approx(math.log(1 / 4) + math.log(1 / deg2), abs=1e-12)
    # ties are broken by (relation name, entity index)
    assert [p.hops[0][1] for p in paths] == ps[:2]


def test_greedy_beam():
    graph = random_graph(seed=2)
    model = PathReasoner(graph, random_table(graph, seed=2), ModelConfig(d_se=3, d_proj=4, seed=1))
    s_se = torch.randn(3, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    (path,) = beam_search(model, s_se, 0, (1, 1))
    step1 = _step_logps(model, s_se, 0, 0)
    hop1 = max(step1, key=step1.get)
    step2 = _step_logps(model, s_se, 0, hop1[1])
    hop2 = max(step2, key=step2.get)
    assert path.hops == (hop1, hop2)
    assert path.log_prob == pytest.approx(step1[hop1] + step2[hop2], abs=1e-10)


def _step_logps(model, s_se, start, current):
    """Independent numpy evaluation of the path policy over the raw adjacency list."""
    W3 = model.policy.W3.detach().numpy()
    W4 = model.policy.W4.detach().numpy()
    ent, table, graph = model.table.entity_vecs, model.table, model.graph
    state = np.concatenate([s_se.numpy(), ent[start], ent[current]])
    q = W4 @ state
    acts = list(graph.neighbors(current))
    logits = np.array([(W3 @ np.concatenate([table.lookup_rel(r), ent[e]])) @ q for r, e in acts])
    logp = logits - logits.max() - np.log(np.exp(logits - logits.max()).sum())
    return dict(zip(acts, logp))


def _enumerate(model, s_se, start):
    out = []
    for a1, lp1 in _step_logps(model, s_se, start, start).items():
        for a2, lp2 in _step_logps(model, s_se, start, a1[1]).items():
            out.append(((a1, a2), lp1 + lp2))
    return out


@pytest.mark.parametrize("seed", range(5))
def test_wide_beam_equals_brute_force(seed):
    graph = random_graph(n_products=15, n_users=6, n_brands=3, n_edges=30, seed=seed)
    assert graph.n_entities <= 30
    model = PathReasoner(graph, random_table(graph, seed=seed), ModelConfig(d_se=3, d_proj=4, seed=seed))
    s_se = torch.randn(3, dtype=torch.float64, generator=torch.Generator().manual_seed(seed))
    wide = max(len(a) for a in graph.adjacency)
    for start in range(0, graph.n_entities, 3):
        if not graph.neighbors(start):
            continue
        got = {p.hops: p.log_prob for p in beam_search(model, s_se, start, (wide, wide))}
        want = dict(_enumerate(model, s_se, start))
        assert got.keys() == want.keys()
        for hops, lp in want.items():
            assert got[hops] == pytest.approx(lp, abs=1e-10)


def test_beam_errors():
    model, hub, ps = star_model()
    with pytest.raises(ValueError):
        beam_search(model, torch.zeros(2, dtype=torch.float64), hub, (3,))
    reg = EntityRegistry()
    a, b = reg.add("product", "a"), reg.add("product", "b")
    reg.add("product", "c")
    graph = finalize([Triple(a, "co_occur", b)], reg)
    lonely = PathReasoner(graph, random_table(graph), ModelConfig(d_se=2, d_proj=2))
    with pytest.raises(GraphError):
        beam_search(lonely, torch.zeros(2, dtype=torch.float64), 2, (5, 5))


def trained_ish_model(seed=0):
    graph = random_graph(n_products=20, n_users=5, n_brands=4, n_edges=50, seed=seed)
    return PathReasoner(graph, random_table(graph, seed=seed), ModelConfig(d_se=4, d_proj=4, seed=seed))


@pytest.mark.parametrize("seed", range(5))
def test_recommendation_invariants(seed):
    model = trained_ish_model(seed)
    rng = np.random.default_rng(seed)
    items = model.graph.items()
    for _ in range(5):
        prefix = [int(x) for x in rng.choice(items, size=3, replace=False)]
        K = 10
        recs = recommend(model, prefix, K)
        assert len(recs) == K
        ids = [r.item for r in recs]
        assert len(set(ids)) == K
        assert not set(ids) & set(prefix)
        assert all(model.graph.is_item(i) for i in ids)
        keys = [(r.origin != "fallback", r.score) for r in recs]
        assert keys == sorted(keys, reverse=True)
        for r in recs:
            if r.origin == "fallback":
                assert r.best_path is None
                continue
            assert 0 < r.score <= 1
            path = r.best_path
            assert path.terminal == r.item
            assert r.score == pytest.approx(math.exp(path.log_prob))
            prev = path.start
            for rel, e in path.hops:
                assert model.graph.has_edge(prev, rel, e)
                prev = e
            assert path.start == (prefix[-1] if r.origin == "short" else path.start)
        assert recommend(model, prefix, K) == recs


def test_only_reachable_product():
    # the only product two hops from p0 is p2 (p0 - user - p2); p1 is in the prefix
    reg = EntityRegistry()
    p0, p1, p2 = (reg.add("product", n) for n in ("p0", "p1", "p2"))
    u = reg.add("user", "u")
    b = reg.add("brand", "b")
    graph = finalize([Triple(u, "purchase", p0), Triple(u, "purchase", p2), Triple(p1, "produced_by", b)], reg)
    model = PathReasoner(graph, random_table(graph), ModelConfig(d_se=2, d_proj=3, session_agent=False))
    (rec,) = recommend(model, [p1, p0], K=1, widths=(10, 10))
    assert rec.item == p2 and rec.origin == "short"
    assert rec.best_path.hops == ((Relation("purchase", True), u), (Relation("purchase"), p2))


def test_item_reached_by_both_walks_appears_once():
    model, hub, ps = star_model()
    # both prefix items reach p2 and p3 through the user
    recs = recommend(model, [ps[0], ps[1]], K=2, widths=(10, 10))
    assert sorted(r.item for r in recs) == sorted(ps[2:])
    # uniform policies: 1/2 * 1/4 from either start; the long walk is scored first and kept
    assert all(r.origin == "long" and r.score == pytest.approx(1 / 8) for r in recs)


def test_fallback_when_no_product_terminal():
    # every 2-hop walk from p0 returns to p0 (excluded) or ends at the brand
    reg = EntityRegistry()
    p0 = reg.add("product", "p0")
    b = reg.add("brand", "b")
    c = reg.add("category", "c")
    others = [reg.add("product", f"q{i}") for i in range(3)]
    u = reg.add("user", "u")
    triples = [Triple(p0, "produced_by", b), Triple(p0, "belong_to", c)] + [Triple(u, "purchase", q) for q in others]
    graph = finalize(triples, reg)
    model = PathReasoner(graph, random_table(graph), ModelConfig(d_se=2, d_proj=3))
    recs = recommend(model, [p0], K=3)
    assert [r.origin for r in recs] == ["fallback"] * 3
    scores = encode(model.encoder, [p0]).item_scores.detach().numpy()
    order = [model.encoder.items[v] for v in np.argsort(-scores, kind="stable") if model.encoder.items[v] != p0]
    assert [r.item for r in recs] == order[:3]


def test_bad_K():
    model, hub, ps = star_model()
    with pytest.raises(ValueError):
        recommend(model, [ps[0]], K=0)


def test_render_arrows():
    reg = EntityRegistry()
    i5, i4, i3, i7 = (reg.add("product", f"item_{n}") for n in (5, 4, 3, 7))
    u = reg.add("user", "user")
    cat = reg.add("category", "phone case")
    path = ReasonPath(i5, ((Relation("purchase", True), u), (Relation("purchase"), i4)), -1.0)
    assert render_explanation(path, reg) == "item_5 <--purchase-- user --purchase--> item_4"
    fwd = ReasonPath(i3, ((Relation("also_bought"), i7), (Relation("co_occur"), i4)), -2.0)
    assert render_explanation(fwd, reg) == "item_3 --also_bought--> item_7 --co_occur--> item_4"
    via_cat = ReasonPath(i3, ((Relation("belong_to"), cat), (Relation("belong_to", True), i5)), -2.0)
    assert render_explanation(via_cat, reg) == "item_3 --belong_to--> phone case <--belong_to-- item_5"


def test_render_json():
    reg = EntityRegistry()
    a, b = reg.add("product", "a"), reg.add("product", "b")
    u = reg.add("user", "u")
    path = ReasonPath(a, ((Relation("purchase", True), u), (Relation("purchase"), b)), -0.5)
    doc = json.loads(render_explanation(path, reg, mode="json"))
    assert doc == {
        "start": "product:a",
        "hops": [
            {"rel": "purchase", "dir": "inverse", "entity": "user:u"},
            {"rel": "purchase", "dir": "forward", "entity": "product:b"},
        ],
        "terminal": "product:b",
        "log_prob": -0.5,
    }


def test_sampling_mode_is_seeded_and_valid():
    model = trained_ish_model(1)
    prefix = model.graph.items()[:2]
    a = recommend(model, prefix, 8, (5, 2), sample_seed=3)
    assert a == recommend(model, prefix, 8, (5, 2), sample_seed=3)
    assert len(a) == 8 and len({r.item for r in a}) == 8
    for r in a:
        if r.best_path is not None:
            prev = r.best_path.start
            for rel, e in r.best_path.hops:
                assert model.graph.has_edge(prev, rel, e)
                prev = e


def test_explain_lines():
    model, hub, ps = star_model()
    lines = explain_session(model, ["p0"], K=2, widths=(10, 10))
    assert len(lines) == 2
    assert lines[0].startswith("1. p")
    assert all(line.split("] ", 1)[1].startswith("p0 ") for line in lines)
    assert any("p0 <--purchase-- u --purchase--> p" in line for line in lines)
