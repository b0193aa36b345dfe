from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathrec.kg import EntityRegistry, Relation, Triple, finalize
from pathrec.rewards import (
    MidpointIndex,
    RewardConfig,
    build_midpoint_index,
    log_sigmoid,
    multi_target_reward,
    path_midpoint_reward,
)

from conftest import random_graph

CFG = RewardConfig(T=5)


def test_reward_config_bounds():
    with pytest.raises(ValueError):
        RewardConfig(T=0)
    with pytest.raises(ValueError):
        RewardConfig(eps=1.0)


def test_log_sigmoid_value():
    # 1 / (1 + e^-1) = 0.7310586, log of that
    assert log_sigmoid(1.0) == pytest.approx(-0.31326169, abs=1e-8)
    assert log_sigmoid(-800.0) == pytest.approx(-800.0)


def test_multi_target_hits():
    vecs = np.eye(6)
    assert multi_target_reward(1, [1, 2, 3, 4, 5], vecs, CFG) == 5.0
    assert multi_target_reward(3, [1, 2, 3, 4, 5], vecs, CFG) == 3.0


def test_multi_target_miss_uses_first_target():
    vecs = np.zeros((3, 2))
    vecs[0] = [1.0, 0.0]
    vecs[1] = [1.0, 5.0]
    vecs[2] = [0.0, 9.0]
    # dot with target 1 is 1.0; target 2 is ignored
    assert multi_target_reward(0, [1, 2], vecs, CFG) == pytest.approx(-0.31326169, abs=1e-8)


def test_multi_target_miss_clamped():
    vecs = np.array([[100.0], [-100.0]])
    assert multi_target_reward(0, [1], vecs, RewardConfig(T=5, eps=1e-8)) == pytest.approx(math.log(1e-8))


def test_multi_target_ignores_targets_beyond_T():
    vecs = np.eye(4)
    assert multi_target_reward(3, [0, 1, 3], vecs, RewardConfig(T=2)) < 0


def test_multi_target_empty_targets():
    with pytest.raises(ValueError):
        multi_target_reward(0, [], np.eye(2), CFG)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.data())
def test_hits_beat_misses_and_earlier_beats_later(T, data):
    cfg = RewardConfig(T=T)
    n = 12
    vecs = np.asarray(data.draw(st.lists(st.floats(-5, 5), min_size=n * 3, max_size=n * 3))).reshape(n, 3)
    t_list = data.draw(st.lists(st.integers(0, n - 2), min_size=1, max_size=T, unique=True))
    hits = [multi_target_reward(t, t_list, vecs, cfg) for t in t_list]
    miss = multi_target_reward(n - 1, t_list, vecs, cfg)
    assert all(1 <= h <= T for h in hits)
    assert hits == sorted(hits, reverse=True)
    assert math.log(cfg.eps) <= miss < 0 or miss == pytest.approx(0.0, abs=1e-12)
    assert miss < min(hits)


def branching_graph():
    # start 6 reaches 32 and 76; only 32 links on to the goal 7
    reg = EntityRegistry()
    ids = {name: reg.add("product", name) for name in ("6", "7", "32", "76")}
    graph = finalize(
        [Triple(ids["6"], "also_bought", ids["32"]), Triple(ids["6"], "also_bought", ids["76"]), Triple(ids["32"], "co_occur", ids["7"])],
        reg,
    )
    return graph, ids


def test_only_connected_branch_is_a_midpoint():
    graph, ids = branching_graph()
    index = build_midpoint_index(graph, [ids["6"]], [ids["7"]])
    assert index[(ids["6"], ids["7"])] == {(Relation("also_bought"), ids["32"])}
    good = (Relation("also_bought"), ids["32"])
    bad = (Relation("also_bought"), ids["76"])
    assert path_midpoint_reward(good, ids["6"], [ids["7"]], index, CFG) == 5.0
    assert path_midpoint_reward(bad, ids["6"], [ids["7"]], index, CFG) == 0.0


def test_chain_and_disconnected():
    reg = EntityRegistry()
    s, m, g, x = (reg.add("product", n) for n in "smgx")
    graph = finalize([Triple(s, "co_occur", m), Triple(m, "co_occur", g)], reg)
    index = MidpointIndex(graph)
    assert index[(s, g)] == {(Relation("co_occur"), m)}
    # inverse edges count, so g reaches s through m as well
    assert index[(g, s)] == {(Relation("co_occur", True), m)}
    assert index[(s, x)] == frozenset()


def test_midpoint_reward_takes_best_target():
    reg = EntityRegistry()
    s, m, t1, t3, other = (reg.add("product", n) for n in ("s", "m", "t1", "t3", "o"))
    graph = finalize([Triple(s, "co_occur", m), Triple(m, "co_occur", t1), Triple(m, "co_occur", t3)], reg)
    index = MidpointIndex(graph)
    action = (Relation("co_occur"), m)
    assert path_midpoint_reward(action, s, [other, t1, other, t3], index, CFG) == 4.0


def brute_force(graph, s, g):
    out = set()
    for rel, mid in graph.neighbors(s):
        if any(e == g for _, e in graph.neighbors(mid)):
            out.add((rel, mid))
    return out


@pytest.mark.parametrize("seed", range(5))
def test_index_matches_brute_force(seed):
    graph = random_graph(n_products=30, n_users=10, n_brands=5, n_edges=60, seed=seed)
    assert graph.n_entities <= 50
    ents = range(graph.n_entities)
    index = build_midpoint_index(graph, ents, ents)
    for s in ents:
        for g in ents:
            assert set(index[(s, g)]) == brute_force(graph, s, g)
    assert len(index) == graph.n_entities ** 2


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 200), st.integers(1, 6), st.data())
def test_midpoint_reward_range(seed, T, data):
    graph = random_graph(seed=seed)
    cfg = RewardConfig(T=T)
    index = MidpointIndex(graph)
    start = data.draw(st.integers(0, graph.n_entities - 1))
    t_list = data.draw(st.lists(st.integers(0, graph.n_entities - 1), min_size=1, max_size=T))
    for action in graph.neighbors(start):
        r = path_midpoint_reward(action, start, t_list, index, cfg)
        assert r in set(range(T + 1))


def test_dump(tmp_path):
    graph, ids = branching_graph()
    index = build_midpoint_index(graph, [ids["6"]], [ids["7"]])
    index.dump(tmp_path / "mid.tsv")
    assert (tmp_path / "mid.tsv").read_text() == f"{ids['6']}\t{ids['7']}\talso_bought\t{ids['32']}\n"
