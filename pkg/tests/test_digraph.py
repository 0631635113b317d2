import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irpushpull.digraph import (
    AssumptionError,
    Digraph,
    build_column_stochastic,
    build_laplacian_mixing,
    build_row_stochastic,
    load_matrix_csv,
    make_topology,
    mixing_from_graph,
    mixing_matrices,
    perron_pair,
    roots,
    save_matrix_csv,
    validate_assumptions,
)


def closure(m, edges):
    """Boolean transitive closure by repeated squaring; independent of BFS."""
    T = np.eye(m, dtype=bool)
    for j, i in edges:
        T[j, i] = True
    for _ in range(max(1, int(np.ceil(np.log2(m))) + 1)):
        T = T | ((T.astype(int) @ T.astype(int)) > 0)
    return T


def brute_roots(m, edges):
    T = closure(m, edges)
    return {r for r in range(m) if T[r].all()}


digraphs = st.integers(1, 6).flatmap(
    lambda m: st.builds(
        lambda es: Digraph(m, frozenset(es)),
        st.sets(st.tuples(st.integers(0, m - 1), st.integers(0, m - 1)).filter(lambda e: e[0] != e[1])),
    )
)


# topologies ---------------------------------------------------------------------------

def test_named_topologies():
    assert make_topology("ring", 3).edges == {(0, 1), (1, 2), (2, 0)}
    assert make_topology("line", 3).edges == {(0, 1), (1, 2)}
    assert make_topology("star", 4).edges == {(0, 1), (0, 2), (0, 3)}


def test_random_topology_strongly_connected():
    g = make_topology("random", 10, seed=7)
    assert closure(10, g.edges).all()
    assert g == make_topology("random", 10, seed=7)


@pytest.mark.parametrize("bad", [0, -1])
def test_topology_rejects_empty(bad):
    with pytest.raises(ValueError):
        make_topology("ring", bad)


def test_digraph_rejects_self_loops():
    with pytest.raises(ValueError):
        Digraph(2, frozenset({(0, 0)}))


def test_neighbor_sets_consistent():
    g = make_topology("random", 8, seed=1)
    for j, i in g.edges:
        assert j in g.in_neighbors[i] and i in g.out_neighbors[j]
    assert sum(len(s) for s in g.in_neighbors) == len(g.edges)


# roots --------------------------------------------------------------------------------

def test_roots_examples():
    assert roots(make_topology("ring", 3)) == {0, 1, 2}
    assert roots(make_topology("line", 3)) == {0}
    assert roots(Digraph(2, frozenset())) == set()


@settings(max_examples=200, deadline=None)
@given(digraphs)
def test_roots_match_closure(g):
    assert roots(g) == brute_roots(g.m, g.edges)


# weight rules -------------------------------------------------------------------------

def test_row_stochastic_single_edge():
    g = Digraph(2, frozenset({(0, 1)}))
    np.testing.assert_array_equal(build_row_stochastic(g, [1, 1]), [[1, 0], [0.5, 0.5]])


def test_column_stochastic_single_edge():
    g = Digraph(2, frozenset({(0, 1)}))
    np.testing.assert_array_equal(build_column_stochastic(g, [1, 1]), [[0.5, 0], [0.5, 1]])


def test_ring_weights():
    g = make_topology("ring", 3)
    R = build_row_stochastic(g)
    C = build_column_stochastic(g)
    np.testing.assert_array_equal(np.diag(R), 0.5)
    np.testing.assert_array_equal(np.diag(C), 0.5)
    for j, i in g.edges:
        assert R[i, j] == 0.5 and C[i, j] == 0.5


@pytest.mark.parametrize("w", [[1, 0], [1, -2]])
def test_weights_reject_nonpositive(w):
    g = Digraph(2, frozenset({(0, 1)}))
    with pytest.raises(ValueError):
        build_row_stochastic(g, w)
    with pytest.raises(ValueError):
        build_column_stochastic(g, w)


def test_laplacian_examples():
    np.testing.assert_allclose(build_laplacian_mixing(make_topology("ring", 2)), [[0.5, 0.5], [0.5, 0.5]])
    R = build_laplacian_mixing(make_topology("ring", 4))
    np.testing.assert_allclose(R.sum(axis=1), 1, atol=1e-15)
    np.testing.assert_allclose(np.diag(R), 0.5)
    R = build_laplacian_mixing(Digraph(3, frozenset({(0, 1)})))
    np.testing.assert_allclose(R.sum(axis=1), 1, atol=1e-15)
    C = build_laplacian_mixing(make_topology("star", 4), column=True)
    np.testing.assert_allclose(C.sum(axis=0), 1, atol=1e-15)


def test_laplacian_rejects_edgeless():
    with pytest.raises(ValueError):
        build_laplacian_mixing(Digraph(3, frozenset()))


@settings(max_examples=100, deadline=None)
@given(digraphs, st.sampled_from(["weights", "laplacian"]), st.sampled_from(["same", "reversed"]))
def test_builders_stochastic(g, rule, push):
    if rule == "laplacian" and not g.edges:
        return
    R, C = mixing_matrices(g, rule=rule, push_graph=push)
    assert np.abs(R.sum(axis=1) - 1).max() <= 1e-12
    assert np.abs(C.sum(axis=0) - 1).max() <= 1e-12
    assert (R >= 0).all() and (C >= 0).all()
    assert (np.diag(R) > 0).all() and (np.diag(C) > 0).all()


# Perron vectors -----------------------------------------------------------------------

def test_perron_doubly_stochastic():
    R = np.array([[0.5, 0.25, 0.25], [0.25, 0.5, 0.25], [0.25, 0.25, 0.5]])
    mix = perron_pair(R, R)
    np.testing.assert_allclose(mix.u, 1, atol=1e-10)
    np.testing.assert_allclose(mix.v, 1, atol=1e-10)


def test_perron_single_edge():
    # u'R = u' with R = [[1, 0], [1/2, 1/2]]: u2 = u2/2 so u = (2, 0)
    R = build_row_stochastic(Digraph(2, frozenset({(0, 1)})))
    mix = perron_pair(R, np.full((2, 2), 0.5))
    np.testing.assert_allclose(mix.u, [2, 0], atol=1e-10)


def test_perron_identity_not_unique():
    with pytest.raises(AssumptionError):
        perron_pair(np.eye(2), np.eye(2))


@pytest.mark.parametrize("kind", ["ring", "line", "star", "random"])
@pytest.mark.parametrize("m", [2, 5, 10])
@pytest.mark.parametrize("rule", ["weights", "laplacian"])
def test_perron_contracts(kind, m, rule):
    g = make_topology(kind, m, seed=3)
    push = "same" if kind in ("ring", "random") else "reversed"
    mix = mixing_from_graph(g, rule=rule, push_graph=push)
    assert np.linalg.norm(mix.u @ mix.R - mix.u) <= 1e-10
    assert np.linalg.norm(mix.C @ mix.v - mix.v) <= 1e-10
    assert abs(mix.u.sum() - m) <= 1e-10 and abs(mix.v.sum() - m) <= 1e-10
    assert mix.u.min() >= -1e-12 and mix.v.min() >= -1e-12
    assert mix.u @ mix.v > 0
    # support equals the root sets of the induced digraphs
    assert set(np.flatnonzero(mix.u > 0)) == brute_roots(m, Digraph.from_matrix(mix.R).edges)
    assert set(np.flatnonzero(mix.v > 0)) == brute_roots(m, Digraph.from_matrix(mix.C.T).edges)


# validation ---------------------------------------------------------------------------

def test_validate_ring_passes():
    g = make_topology("ring", 5)
    report = validate_assumptions(*mixing_matrices(g))
    assert report.ok and report.failures() == []


def test_validate_zero_diagonal():
    R = np.array([[0.0, 1.0], [0.5, 0.5]])
    report = validate_assumptions(R, np.full((2, 2), 0.5))
    assert report.failures() == ["R positive diagonal"]


def test_validate_line_root_intersection():
    g = make_topology("line", 3)
    R = build_row_stochastic(g)
    same = validate_assumptions(R, build_column_stochastic(g))
    rev = validate_assumptions(R, build_column_stochastic(g.reversed()))
    expect_same = brute_roots(3, Digraph.from_matrix(R).edges) & brute_roots(
        3, Digraph.from_matrix(build_column_stochastic(g).T).edges)
    assert same.checks["root sets intersect"] == bool(expect_same)
    assert not same.checks["root sets intersect"]
    assert rev.ok


def test_validate_never_raises_on_shape_mismatch():
    report = validate_assumptions(np.eye(2), np.eye(3))
    assert not report.ok


def test_perron_rejects_invalid_pair():
    g = make_topology("line", 3)
    with pytest.raises(AssumptionError):
        perron_pair(*mixing_matrices(g, push_graph="same"))


def test_matrix_csv_round_trip(tmp_path):
    M = mixing_from_graph(make_topology("random", 6, seed=2)).R
    save_matrix_csv(tmp_path / "R.csv", M)
    np.testing.assert_array_equal(load_matrix_csv(tmp_path / "R.csv"), M)
