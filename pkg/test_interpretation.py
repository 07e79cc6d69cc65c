#!/usr/bin/env python3
"""
測試節點指標與角色解釋
"""

import sys
import os
import itertools
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import networkx as nx
import numpy as np
import pandas as pd
import pytest

from conftest import snapshot_from_graph
from core.errors import InsufficientDataError, SchemaMismatchError
from core.interpretation import (
    MEASURES, NodeMeasureMatrix, RoleExplanation, RoleInterpreter, compute_node_measures,
    dominant_measure, interpret_roles, role_labels,
)
from core.role_discovery import MembershipMatrix
from core.temporal_graph import SnapshotGraph, TemporalEdgeSet, bin_snapshots


def _measures(t, M):
    M = np.asarray(M, dtype=float)
    return NodeMeasureMatrix(t, np.arange(M.shape[0]), M, normalized=False)


def _memberships(t, G):
    G = np.asarray(G, dtype=float)
    return MembershipMatrix(t, np.arange(G.shape[0]), G)


# ---- 節點指標 ----

def test_triangle_measures(triangle):
    M = compute_node_measures(triangle)
    np.testing.assert_array_equal(M.column('clustering coefficient'), [1, 1, 1])
    np.testing.assert_array_equal(M.column('betweenness'), [0, 0, 0])
    np.testing.assert_array_equal(M.column('biconnected components'), [1, 1, 1])
    np.testing.assert_array_equal(M.column('degree'), [4, 4, 4])


def test_path_measures(path3):
    M = compute_node_measures(path3)
    np.testing.assert_array_equal(M.column('betweenness'), [0, 1, 0])
    np.testing.assert_array_equal(M.column('biconnected components'), [1, 2, 1])
    np.testing.assert_array_equal(M.column('clustering coefficient'), [0, 0, 0])


def test_cycle_pagerank_uniform():
    M = compute_node_measures(snapshot_from_graph(nx.cycle_graph(4)))
    np.testing.assert_allclose(M.column('pagerank'), [0.25] * 4, atol=1e-10)


def test_star_center_is_articulation_point():
    M = compute_node_measures(snapshot_from_graph(nx.star_graph(3)))
    assert M.column('biconnected components')[0] == 3
    np.testing.assert_array_equal(M.column('biconnected components')[1:], [1, 1, 1])


def test_measure_invariants(star_clique):
    _, snapshot = star_clique
    M = compute_node_measures(snapshot)
    assert M.column('pagerank').sum() == pytest.approx(1.0, abs=1e-9)
    clustering = M.column('clustering coefficient')
    assert np.all((clustering >= 0) & (clustering <= 1))
    assert M.raw.min() >= 0
    assert M.values.max() == pytest.approx(1.0)
    np.testing.assert_allclose(M.values.max(axis=0), 1.0)


def test_pagerank_is_fixed_point(rng):
    """加權有向圖：p = α·Pᵀp + α·(懸空節點質量)/n + (1−α)/n"""
    n = 25
    src = rng.integers(0, n, 120)
    dst = (src + rng.integers(1, n, 120)) % n
    snapshot = SnapshotGraph.from_triples(1, src, dst, rng.uniform(0.5, 3.0, 120))
    # 平行邊在 from_triples 中會被合併
    p = compute_node_measures(snapshot).column('pagerank')

    A = snapshot.adjacency.toarray()
    out = A.sum(axis=1)
    P = np.divide(A, out[:, np.newaxis], out=np.zeros_like(A), where=out[:, np.newaxis] > 0)
    m = snapshot.n_nodes
    dangling = p[out == 0].sum()
    step = 0.85 * (P.T @ p + dangling / m) + 0.15 / m
    assert np.abs(p - step).sum() < 1e-9


def _brute_force_betweenness(graph):
    """列舉所有最短路徑"""
    score = {v: 0.0 for v in graph}
    for s, t in itertools.combinations(graph.nodes, 2):
        if not nx.has_path(graph, s, t):
            continue
        paths = list(nx.all_shortest_paths(graph, s, t))
        for v in graph:
            if v in (s, t):
                continue
            score[v] += sum(1 for path in paths if v in path) / len(paths)
    return score


def test_betweenness_matches_brute_force():
    """500 個最多 8 個節點的隨機圖"""
    rng = np.random.default_rng(2024)
    checked = 0
    while checked < 500:
        n = int(rng.integers(2, 9))
        graph = nx.gnp_random_graph(n, float(rng.uniform(0.2, 0.9)), seed=int(rng.integers(1 << 30)))
        graph.remove_nodes_from(list(nx.isolates(graph)))
        if graph.number_of_edges() == 0:
            continue
        snapshot = snapshot_from_graph(graph)
        measured = compute_node_measures(snapshot).column('betweenness')
        expected = _brute_force_betweenness(graph)
        for local, node in enumerate(snapshot.active_nodes):
            assert measured[local] == pytest.approx(expected[int(node)], abs=1e-9)
        checked += 1


def test_betweenness_size_guard(triangle):
    M = compute_node_measures(triangle, betweenness_node_cap=2)
    assert M.omitted == ['betweenness']
    np.testing.assert_array_equal(M.column('betweenness'), [0, 0, 0])
    assert M.column('pagerank').sum() == pytest.approx(1.0)


def test_raw_values_when_not_normalized(path3):
    M = compute_node_measures(path3, normalize=False)
    np.testing.assert_array_equal(M.values, M.raw)
    assert not M.normalized


def test_empty_snapshot_measures():
    M = compute_node_measures(SnapshotGraph.empty(4))
    assert M.n_rows == 0
    assert M.timestep == 4


def test_measure_frame(path3):
    frame = compute_node_measures(path3).to_frame(['a', 'b', 'c'])
    assert list(frame.columns) == ['node', 't'] + list(MEASURES)
    assert frame['node'].tolist() == ['a', 'b', 'c']


def test_interpreter_over_sequence():
    edges = TemporalEdgeSet([0, 1, 1, 2], [1, 0, 2, 1], [1, 1, 1, 1], [0, 0, 5, 5], [0, 0, 5, 5],
                            ['a', 'b', 'c'])
    sequence = bin_snapshots(edges, window_width=2)
    M_seq = RoleInterpreter(workers=2).measures(sequence)
    assert [M.timestep for M in M_seq] == [1, 2, 3]
    assert [M.n_rows for M in M_seq] == [2, 0, 2]


# ---- 角色解釋 ----

def test_identity_memberships_recover_measures(rng):
    M = rng.random((4, 5))
    explanation = interpret_roles([_memberships(1, np.eye(4))], [_measures(1, M)])
    np.testing.assert_allclose(explanation.per_timestep[0], M, atol=1e-12)


def test_planted_contributions_recovered(rng):
    G = rng.uniform(0, 1, (30, 3))
    E_star = rng.uniform(0, 2, (3, 5))
    explanation = interpret_roles([_memberships(1, G)], [_measures(1, G @ E_star)])
    E = explanation.per_timestep[0]
    assert np.linalg.norm(E - E_star) / np.linalg.norm(E_star) < 1e-4


def test_contributions_averaged_over_time(rng):
    G1 = rng.uniform(0, 1, (20, 2))
    G2 = rng.uniform(0, 1, (15, 2))
    E_star = rng.uniform(0, 1, (2, 5))
    explanation = interpret_roles(
        [_memberships(1, G1), _memberships(2, G2)],
        [_measures(1, G1 @ E_star), _measures(2, G2 @ (2 * E_star))],
    )
    np.testing.assert_allclose(explanation.averaged, 1.5 * E_star, rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(explanation.averaged, np.mean(explanation.per_timestep, axis=0))


def test_small_timesteps_are_skipped(rng):
    G = rng.uniform(0, 1, (10, 3))
    explanation = interpret_roles(
        [_memberships(1, G[:2]), _memberships(2, G), _memberships(3, np.zeros((0, 3)))],
        [_measures(1, rng.random((2, 5))), _measures(2, rng.random((10, 5))), _measures(3, np.zeros((0, 5)))],
    )
    assert explanation.timesteps == [2]
    assert explanation.skipped == [1, 3]


def test_all_timesteps_too_small(rng):
    with pytest.raises(InsufficientDataError):
        interpret_roles([_memberships(1, rng.random((2, 3)))], [_measures(1, rng.random((2, 5)))])


def test_sequence_mismatch(rng):
    G = _memberships(1, rng.random((4, 2)))
    with pytest.raises(SchemaMismatchError):
        interpret_roles([G, G], [_measures(1, rng.random((4, 5)))])
    shifted = NodeMeasureMatrix(1, np.arange(1, 5), rng.random((4, 5)), normalized=False)
    with pytest.raises(SchemaMismatchError) as info:
        interpret_roles([G], [shifted])
    assert info.value.timestep == 1


def test_residual_never_exceeds_zero_solution(rng):
    for _ in range(20):
        G = rng.random((12, 3))
        M = rng.random((12, 5))
        explanation = interpret_roles([_memberships(1, G)], [_measures(1, M)])
        assert explanation.residuals[1] <= np.linalg.norm(M) + 1e-12


def test_column_scaling_covariance(rng):
    G = rng.random((15, 3))
    M = rng.random((15, 5))
    scaled = M.copy()
    scaled[:, 2] *= 7.0
    E = interpret_roles([_memberships(1, G)], [_measures(1, M)]).per_timestep[0]
    E_scaled = interpret_roles([_memberships(1, G)], [_measures(1, scaled)]).per_timestep[0]
    np.testing.assert_allclose(E_scaled[:, 2], 7.0 * E[:, 2], rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(np.delete(E_scaled, 2, axis=1), np.delete(E, 2, axis=1), atol=1e-12)


def _explanation(averaged):
    averaged = np.asarray(averaged, dtype=float)
    return RoleExplanation([averaged], [1], {1: 0.0})


def test_dominant_measure_unique_max():
    assert dominant_measure(_explanation([[0, 0, 1, 0, 0]]), 1) == 'pagerank'


def test_dominant_measure_zero_row_is_degenerate():
    explanation = _explanation([[0, 0, 0, 0, 0], [0, 2, 0, 0, 1]])
    assert dominant_measure(explanation, 1) == 'betweenness'
    labels = role_labels(explanation)
    assert labels[0] == {'role': 1, 'measure': 'betweenness', 'degenerate': True}
    assert labels[1] == {'role': 2, 'measure': 'biconnected components', 'degenerate': False}


def test_planted_clustering_role(rng):
    E_star = np.array([[1.0, 0.2, 0.1, 0.0, 0.3], [0.1, 0.0, 0.2, 1.5, 0.4]])
    G = rng.uniform(0, 1, (25, 2))
    explanation = interpret_roles([_memberships(1, G)], [_measures(1, G @ E_star)])
    assert dominant_measure(explanation, 2) == 'clustering coefficient'
    assert dominant_measure(explanation, 1) == 'betweenness'


def test_explanation_export(tmp_path, rng):
    G = rng.random((10, 2))
    explanation = RoleInterpreter().explain([_memberships(3, G)], [_measures(3, rng.random((10, 5)))])
    path = str(tmp_path / 'explanation.csv')
    explanation.save_csv(path)
    frame = pd.read_csv(path)
    assert list(frame.columns) == ['role', 'measure', 'contribution']
    assert len(frame) == 10
    data = explanation.to_dict()
    assert data['timesteps'] == [3]
    assert set(data['residuals']) == {'3'}


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, '-v']))
