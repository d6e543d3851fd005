import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import chisquare

from oracles import all_simple_paths, brute_shortest_length
from splatnav.graph import TopoGraph, ViewpointNode
from splatnav.nav import (STOP, Episode, IllegalActionError, MoveTo, compute_metrics, episode_seed,
                          episodes_from_json, episodes_to_json, evaluate, generate_episodes, path_length,
                          random_agent, reset, run_episode, shortest_path, step)


def make_graph(points, edges, ids=None):
    ids = list(range(len(points))) if ids is None else ids
    pts = [tuple(p) + (0.0,) * (3 - len(p)) for p in points]
    return TopoGraph([ViewpointNode(i, p) for i, p in zip(ids, pts)], [(ids[a], ids[b]) for a, b in edges])


def grid_graph(n, spacing=2.5):
    pts = [(spacing * c, spacing * r) for r in range(n) for c in range(n)]
    edges = [(r * n + c, r * n + c + 1) for r in range(n) for c in range(n - 1)]
    edges += [(r * n + c, (r + 1) * n + c) for r in range(n - 1) for c in range(n)]
    return make_graph(pts, edges)


def adjacency(g):
    return {v: g.neighbors(v) for v in g.node_ids()}, {v: g.position(v) for v in g.node_ids()}


def episode_to(g, start, goal_id, eid="e"):
    return Episode(eid, start, g.position(goal_id), shortest_path(g, start, g.position(goal_id)))


# ---------------------------------------------------------------- environment

def test_single_node_graph():
    g = make_graph([(0, 0)], [])
    ep = Episode("one", 0, [0, 0, 0], [0])
    s, obs = reset(g, ep)
    assert obs.neighbors == [] and s.current_node == 0
    s, _ = step(g, s, STOP)
    assert s.done and s.path_trace == (0,)
    m = compute_metrics(g, ep, s.path_trace)
    assert (m.ne, m.sr, m.osr, m.spl, m.pl) == (0.0, 1.0, 1.0, 1.0, 0.0)


def test_reset_is_repeatable():
    g = grid_graph(3)
    ep = episode_to(g, 0, 8)
    a, oa = reset(g, ep)
    b, ob = reset(g, ep)
    assert a == b and [n.node_id for n in oa.neighbors] == [n.node_id for n in ob.neighbors] == [1, 3]


def test_observation_headings():
    g = grid_graph(2)
    _, obs = reset(g, Episode("h", 0, [0, 0, 0], [0]))
    views = {n.node_id: n for n in obs.neighbors}
    assert views[1].heading == 0.0 and views[2].heading == pytest.approx(math.pi / 2)
    assert views[1].distance == 2.5


def test_single_edge_path_length():
    g = make_graph([(0, 0), (2.5, 0)], [(0, 1)])
    ep = episode_to(g, 0, 1)
    s, _ = reset(g, ep)
    s, _ = step(g, s, MoveTo(1))
    s, _ = step(g, s, STOP)
    assert path_length(g, s.path_trace) == 2.5


def test_illegal_move_carries_failed_state():
    g = grid_graph(3)
    s, _ = reset(g, episode_to(g, 0, 8))
    with pytest.raises(IllegalActionError) as err:
        step(g, s, MoveTo(4))
    assert err.value.state.failed and err.value.state.done and err.value.state.path_trace == (0,)
    with pytest.raises(IllegalActionError):
        step(g, s, MoveTo(99))
    with pytest.raises(IllegalActionError):
        step(g, s, "jump")


def test_no_action_after_stop():
    g = grid_graph(2)
    s, _ = reset(g, episode_to(g, 0, 3))
    s, _ = step(g, s, STOP)
    with pytest.raises(IllegalActionError):
        step(g, s, MoveTo(1))


def test_illegal_trace_scores_failure():
    g = grid_graph(3)
    ep = episode_to(g, 0, 8)
    trace, failed = run_episode(g, ep, [0, 1, 2, 5, 8, 0])
    assert failed and trace == [0, 1, 2, 5, 8]
    assert compute_metrics(g, ep, trace, failed=True).sr == 0.0


def test_step_budget():
    g = make_graph([(0, 0), (1, 0)], [(0, 1)])
    ep = Episode("b", 0, [1, 0, 0], [0, 1])
    trace, failed = run_episode(g, ep, [0, 1] * 40, max_steps=5)
    assert not failed and len(trace) == 6


# ---------------------------------------------------------------- shortest paths

def check_against_enumeration(g, s, t):
    adj, pos = adjacency(g)
    got = shortest_path(g, s, g.position(t))
    best = brute_shortest_length(adj, pos, s, t)
    assert path_length(g, got) == pytest.approx(best, abs=1e-9)
    tight = sorted(p for p in all_simple_paths(adj, s, t) if path_length(g, p) <= best + 1e-9)
    assert got == tight[0]


def test_four_cycle_exhaustive():
    g = make_graph([(0, 0), (3, 0), (3, 3), (0, 3)], [(0, 1), (1, 2), (2, 3), (0, 3)])
    for s in range(4):
        for t in range(4):
            check_against_enumeration(g, s, t)


def test_grid_exhaustive():
    g = grid_graph(5)
    for s, t in [(0, 24), (0, 12), (0, 7), (4, 20), (12, 0), (12, 19), (6, 18), (3, 21)]:
        check_against_enumeration(g, s, t)


def test_path_to_self():
    g = grid_graph(3)
    assert shortest_path(g, 4, g.position(4)) == [4]


def test_goal_resolves_to_nearest_node():
    g = grid_graph(3)
    assert shortest_path(g, 0, [4.9, 4.9, 0])[-1] == 8


# ---------------------------------------------------------------- agents

def test_random_first_move_uniform_on_star():
    k = 6
    pts = [(0, 0)] + [(3 * math.cos(2 * math.pi * i / k), 3 * math.sin(2 * math.pi * i / k)) for i in range(k)]
    g = make_graph(pts, [(0, i) for i in range(1, k + 1)])
    ep = Episode("star", 0, [10, 10, 0], [0])
    counts = np.bincount([random_agent(g, ep, seed)[1] for seed in range(10 ** 4)], minlength=k + 1)[1:]
    assert chisquare(counts).pvalue > 1e-3


def test_random_agent_deterministic_and_ten_moves():
    g = grid_graph(4)
    ep = Episode("r", 5, [0, 0, 0], [5])
    a = random_agent(g, ep, seed=7)
    assert a == random_agent(g, ep, seed=7)
    assert len(a) == 11
    assert all(g.has_edge(u, v) for u, v in zip(a, a[1:]))


def test_random_agent_isolated_start():
    g = make_graph([(0, 0), (5, 0), (10, 0)], [(1, 2)])
    assert random_agent(g, Episode("iso", 0, [10, 0, 0], [0]), seed=3) == [0]


def test_episode_seeds_distinct():
    seeds = {episode_seed(0, i) for i in range(1000)}
    assert len(seeds) == 1000 and episode_seed(0, 5) == episode_seed(0, 5)


# ---------------------------------------------------------------- metrics

def test_shortest_agent_perfect_scores():
    g = grid_graph(5)
    eps = generate_episodes(g, 20, seed=1, min_distance=5.0)
    m = evaluate(g, eps, "shortest").means()
    assert m["NE"] == 0.0 and m["SR"] == m["OSR"] == m["SPL"] == 100.0


def test_spl_half():
    # a 2 m detour out and back before the 4 m shortest path doubles the length
    g = make_graph([(0, 0), (4, 0), (-2, 0)], [(0, 1), (0, 2)])
    ep = episode_to(g, 0, 1)
    m = compute_metrics(g, ep, [0, 2, 0, 1])
    assert m.sr == 1.0 and m.pl == 8.0 and m.spl == 0.5


def test_stop_far_from_goal():
    g = make_graph([(0, 0), (10, 0)], [(0, 1)])
    ep = episode_to(g, 0, 1)
    m = compute_metrics(g, ep, [0])
    assert (m.ne, m.sr, m.osr, m.spl, m.pl) == (10.0, 0.0, 0.0, 0.0, 0.0)


def test_oracle_success_without_success():
    g = make_graph([(0, 0), (10, 0), (20, 0)], [(0, 1), (1, 2)])
    ep = episode_to(g, 0, 1)
    m = compute_metrics(g, ep, [0, 1, 2])
    assert m.osr == 1.0 and m.sr == 0.0 and m.ne == 10.0


def test_means_of_hand_built_episodes():
    g = make_graph([(0, 0), (10, 0)], [(0, 1)])
    eps = [episode_to(g, 0, 1, "a"), episode_to(g, 0, 1, "b")]
    plans = {"a": [0, 1], "b": [0]}
    rep = evaluate(g, eps, lambda graph, ep, seed: plans[ep.episode_id])
    assert rep.means() == {"NE": 5.0, "SR": 50.0, "OSR": 50.0, "SPL": 50.0, "PL": 5.0}


@given(st.permutations(list(range(9))))
def test_relabeling_invariance(perm):
    base = grid_graph(3)
    pts = [tuple(base.position(i)[:2]) for i in range(9)]
    edges = base.edges
    relab = make_graph(pts, edges, ids=[100 + p for p in perm])
    eps_a = [episode_to(base, 0, 8, "x"), episode_to(base, 2, 6, "y")]
    eps_b = [episode_to(relab, 100 + perm[0], 100 + perm[8], "x"), episode_to(relab, 100 + perm[2], 100 + perm[6], "y")]
    for agent in ("shortest",):
        a = evaluate(base, eps_a, agent).means()
        b = evaluate(relab, eps_b, agent).means()
        assert a == pytest.approx(b, abs=1e-12)


def test_workers_do_not_change_results():
    g = grid_graph(5)
    eps = generate_episodes(g, 30, seed=2, min_distance=5.0)
    a = evaluate(g, eps, "random", seed=4, workers=1).to_json()
    b = evaluate(g, eps, "random", seed=4, workers=4).to_json()
    assert a == b


def test_generated_episodes_respect_min_distance():
    g = grid_graph(5)
    for ep in generate_episodes(g, 25, seed=3, min_distance=7.5):
        assert path_length(g, ep.gt_path) >= 7.5
        ep.check(g)
    with pytest.raises(ValueError):
        generate_episodes(g, 5, min_distance=100.0)


def test_episodes_json_round_trip():
    g = grid_graph(4)
    eps = generate_episodes(g, 8, seed=5, min_distance=5.0)
    eps[0].instruction = "walk to the far corner"
    back = episodes_from_json(episodes_to_json(eps))
    assert episodes_to_json(back) == episodes_to_json(eps)


def test_bad_episode_rejected():
    g = grid_graph(3)
    with pytest.raises(ValueError):
        evaluate(g, [Episode("bad", 0, [0, 0, 0], [0, 4])])
    with pytest.raises(ValueError):
        evaluate(g, [])
