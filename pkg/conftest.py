"""
pytest 共用設定與測試資料
"""

import os
import sys

import networkx as nx
import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from core.temporal_graph import SnapshotGraph


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: 執行時間較長的驗收測試')


def snapshot_from_graph(graph: nx.Graph, index: int = 1, directed: bool = False) -> SnapshotGraph:
    """把 networkx 圖（節點為 0..n-1 整數）轉成快照；無向圖的每條邊加入兩個方向"""
    pairs = list(graph.edges())
    if not directed:
        pairs += [(v, u) for u, v in pairs]
    src = np.array([u for u, _ in pairs], dtype=np.int64)
    dst = np.array([v for _, v in pairs], dtype=np.int64)
    return SnapshotGraph.from_triples(index, src, dst, np.ones(len(pairs)))


def star_clique_graph(n_stars: int = 5, leaves: int = 4, n_cliques: int = 5, clique_size: int = 5) -> nx.Graph:
    """星狀子圖與完全子圖組成的圖；回傳的圖帶有 kind 節點屬性（hub / leaf / clique）"""
    graph = nx.Graph()
    label = 0
    for _ in range(n_stars):
        hub = label
        graph.add_node(hub, kind='hub')
        for i in range(leaves):
            graph.add_node(label + 1 + i, kind='leaf')
            graph.add_edge(hub, label + 1 + i)
        label += leaves + 1
    for _ in range(n_cliques):
        members = list(range(label, label + clique_size))
        graph.add_nodes_from(members, kind='clique')
        graph.add_edges_from(nx.complete_graph(members).edges())
        label += clique_size
    return graph


@pytest.fixture
def triangle():
    return snapshot_from_graph(nx.complete_graph(3))


@pytest.fixture
def path3():
    return snapshot_from_graph(nx.path_graph(3))


@pytest.fixture
def star_clique():
    graph = star_clique_graph()
    return graph, snapshot_from_graph(graph)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
