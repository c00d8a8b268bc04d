import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resmtl.errors import InvalidAgentError, InvalidSpecError
from resmtl.topology import (
    build_graph,
    complete_graph,
    default_radius,
    explicit_graph,
    geometric_graph,
    load_edge_list,
    neighborhood,
)


def test_complete_three():
    g = complete_graph(3)
    loops = {e for e in g.edges if e[0] == e[1]}
    assert len(loops) == 3 and len(g.edges - loops) == 3
    assert all(g.degree(k) == 3 for k in range(3))
    assert neighborhood(g, 1) == {0, 1, 2}


def test_explicit_adds_self_loops():
    g = explicit_graph(2, [(0, 1)])
    assert g.edges == {(0, 0), (1, 1), (0, 1)}


def test_isolated_agent_keeps_itself():
    g = explicit_graph(3, [(0, 1)])
    assert neighborhood(g, 2) == {2}
    assert g.disconnected


def test_path_neighborhood():
    g = explicit_graph(3, [(0, 1), (1, 2)])
    assert neighborhood(g, 1) == {0, 1, 2}
    assert not g.disconnected


def test_edge_outside_range_rejected():
    with pytest.raises(InvalidSpecError):
        explicit_graph(2, [(0, 2)])


def test_neighborhood_bad_id():
    with pytest.raises(InvalidAgentError):
        neighborhood(complete_graph(3), 3)
    with pytest.raises(InvalidAgentError):
        neighborhood(complete_graph(3), -1)


def test_geometric_two_components(caplog):
    pos = [(0, 0), (1, 0), (5, 0), (5, 1)]
    with caplog.at_level(logging.WARNING):
        g = geometric_graph(4, radius=1.5, positions=pos)
    assert g.disconnected and g.components() == 2
    assert neighborhood(g, 0) == {0, 1}
    assert neighborhood(g, 3) == {2, 3}
    assert "components" in caplog.text


def test_geometric_matches_pairwise_distances():
    rng = np.random.default_rng(4)
    pos = rng.uniform(0, 10, (30, 2))
    g = geometric_graph(30, radius=2.5, positions=pos)
    for l in range(30):
        for k in range(30):
            assert g.has_edge(l, k) == (np.linalg.norm(pos[l] - pos[k]) <= 2.5)


def test_geometric_seeded():
    a = geometric_graph(50, seed=3)
    b = geometric_graph(50, seed=3)
    assert a.edges == b.edges
    assert np.array_equal(a.positions, b.positions)


def test_default_radius_shrinks_with_n():
    assert default_radius(100, 20.0) < default_radius(10, 20.0)


def test_edge_file(tmp_path):
    p = tmp_path / "edges.txt"
    p.write_text("# ring\n0 1\n1 2  # tail\n\n2 0\n")
    g = load_edge_list(p)
    assert g.n == 3 and neighborhood(g, 0) == {0, 1, 2}
    p.write_text("0 1 2\n")
    with pytest.raises(InvalidSpecError, match=":1:"):
        load_edge_list(p)


def test_build_graph_dispatch():
    assert build_graph({"kind": "complete", "n": 4}).max_degree == 4
    assert build_graph({"kind": "explicit", "n": 3, "edges": [[0, 2]]}).has_edge(2, 0)
    with pytest.raises(InvalidSpecError):
        build_graph({"kind": "ring", "n": 3})


@st.composite
def random_graphs(draw):
    n = draw(st.integers(1, 12))
    pairs = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=30))
    return explicit_graph(n, pairs)


@settings(max_examples=100, deadline=None)
@given(random_graphs())
def test_self_in_neighborhood_and_symmetric(g):
    for k in range(g.n):
        nk = neighborhood(g, k)
        assert k in nk
        for l in nk:
            assert k in neighborhood(g, l)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 25), st.floats(0.0, 30.0), st.integers(0, 2**32 - 1))
def test_geometric_symmetric(n, radius, seed):
    g = geometric_graph(n, radius=radius, seed=seed)
    for k in range(n):
        for l in neighborhood(g, k):
            assert k in neighborhood(g, l)
