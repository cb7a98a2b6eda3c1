import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from arboreal.forest import ForestState, is_forest, toggle_ratio, weight
from arboreal.lattice import Torus, cycle, make_graph, path


def test_weight_examples():
    assert weight(ForestState(path(3)), 2.0, 0.0).value == 1.0
    assert weight(ForestState(path(3), [0]), 2.0, 0.5).value == pytest.approx(6.0, rel=1e-14)
    for beta in (0.3, 1.0, 7.5):
        assert weight(ForestState(cycle(3), [0, 1]), beta, 0.0).value == pytest.approx(beta**2, rel=1e-14)


def test_weight_factored_form():
    f = ForestState(path(3), [0])
    w = weight(f, 2.0, 0.5)
    assert w.edge_count == 1 and w.tree_sizes == (1, 2)
    assert math.exp(w.log_weight) == pytest.approx(2.0 * (1 + 0.5) * (1 + 1.0), rel=1e-14)


def test_toggle_outcomes():
    f = ForestState(cycle(3))
    out = f.toggle_edge(0)
    assert out.kind == "added" and out.sizes == (2,)
    out = f.toggle_edge(0)
    assert out.kind == "removed" and sorted(out.sizes) == [1, 1]
    f = ForestState(cycle(3), [0, 1])  # edges 01, 12
    assert f.toggle_edge(2).kind == "rejected"


def test_tree_of():
    f = ForestState(path(3), [0])
    assert f.tree_of(0) == f.tree_of(1) and f.tree_of(0)[1] == 2
    assert f.tree_of(2)[1] == 1
    f.toggle_edge(1)
    assert {f.tree_of(x)[1] for x in range(3)} == {3}


def test_invalid_initial_forest():
    with pytest.raises(ValueError):
        ForestState(cycle(3), [0, 1, 2])


def _bfs_sizes(graph, present):
    adj = graph.adjacency_lists()
    seen = -np.ones(graph.n, dtype=int)
    comp = 0
    for s in range(graph.n):
        if seen[s] >= 0:
            continue
        stack = [s]
        seen[s] = comp
        while stack:
            x = stack.pop()
            for y, k in adj[x]:
                if present[k] and seen[y] < 0:
                    seen[y] = comp
                    stack.append(y)
        comp += 1
    return seen


def test_random_toggle_fuzz(rng):
    g = Torus(2, 5, 1).graph()
    f = ForestState(g)
    for step in range(100_000):
        f.toggle_edge(int(rng.integers(g.m)))
        if step % 1000 == 0:
            assert is_forest(g, f.edge_indices)
            comp = _bfs_sizes(g, f.present)
            # same partition as the maintained labels, and sizes agree
            for x in range(g.n):
                assert f.size[f.label[x]] == np.sum(comp == comp[x])
                assert np.all((comp == comp[x]) == (f.label == f.label[x]))
            assert sum(len(v) for v in f.trees().values()) == g.n


@given(st.integers(0, 2**32 - 1), st.floats(0.05, 5.0), st.floats(0.0, 2.0))
@settings(max_examples=40, deadline=None)
def test_removal_weight_ratio(seed, beta, h):
    r = np.random.default_rng(seed)
    g = Torus(2, 3, 1).graph()
    f = ForestState(g)
    for _ in range(40):
        f.toggle_edge(int(r.integers(g.m)))
    if not len(f.edge_indices):
        return
    e = int(r.choice(f.edge_indices))
    w_full = weight(f, beta, h)
    T = f.tree_of(g.edges[e, 0])[1]
    out = f.toggle_edge(e)
    w_cut = weight(f, beta, h)
    tu, tv = out.sizes
    expected = (1 + h * tu) * (1 + h * tv) / (beta * (1 + h * T))
    assert math.exp(w_cut.log_weight - w_full.log_weight) == pytest.approx(expected, rel=1e-12)
    assert toggle_ratio(False, beta, h * tu, h * tv) == pytest.approx(expected, rel=1e-12)


def test_serialization_roundtrip():
    g = Torus(2, 3, 1).graph()
    f = ForestState(g, [0, 4, 9])
    text = f.serialize()
    assert text == "0\n4\n9\n"
    back = ForestState.deserialize(g, text)
    assert back.edge_indices.tolist() == [0, 4, 9]


def test_toggle_ratio_limits():
    assert toggle_ratio(True, 1.7, 0.0, 0.0) == pytest.approx(1.7)
    assert toggle_ratio(True, 0.0, 0.3, 0.2) == 0.0
    assert toggle_ratio(False, 0.0, 0.3, 0.2) == np.inf


def test_is_forest_independent():
    g = cycle(3)
    assert is_forest(g, [0, 1]) and not is_forest(g, [0, 1, 2])
    assert is_forest(make_graph(4, []), [])
