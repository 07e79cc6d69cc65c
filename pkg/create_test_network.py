#!/usr/bin/env python3
"""
創建測試用的時間網路與矩陣
- 角色轉換網路：星狀中心在指定時間步變成邊緣節點
- 已知秩的非負矩陣
- 邊數倍增的隨機網路（效能測試用）
"""

import argparse
import os
from typing import List, Tuple

import networkx as nx
import numpy as np


Edge = Tuple[str, str, float]


def _both_directions(graph: nx.Graph, t: float) -> List[Edge]:
    edges = []
    for u, v in sorted(graph.edges()):
        edges.append((str(u), str(v), t))
        edges.append((str(v), str(u), t))
    return edges


def create_switch_network(n_stars: int = 30, leaves: int = 5, n_cliques: int = 24, clique_size: int = 5,
                          t_max: int = 20, switch_at: int = 10) -> Tuple[List[Edge], List[str]]:
    """
    創建角色轉換網路

    switch_at 之前：n_stars 個星狀子圖（中心為轉換節點）與 n_cliques 個完全子圖。
    switch_at 起：每個星狀子圖的葉節點彼此相連成完全子圖，原中心只連到第一個葉節點。
    同一階段內每個時間步的結構完全相同。

    Args:
        n_stars: 星狀子圖數量
        leaves: 每個星狀子圖的葉節點數
        n_cliques: 完全子圖數量
        clique_size: 完全子圖大小
        t_max: 時間步數（時間為 0..t_max-1，時間窗寬度 1 時第 t 步即時間 t-1）
        switch_at: 轉換發生的時間步（從 1 開始）

    Returns:
        Tuple[List[Edge], List[str]]: (src, dst, time) 邊列表與轉換節點標籤
    """
    before = nx.Graph()
    after = nx.Graph()
    switchers = []
    label = 0
    for _ in range(n_stars):
        hub = f"n{label}"
        members = [f"n{label + 1 + i}" for i in range(leaves)]
        label += leaves + 1
        switchers.append(hub)
        before.add_edges_from((hub, leaf) for leaf in members)
        after.add_edges_from(nx.complete_graph(members).edges())
        after.add_edge(hub, members[0])

    for _ in range(n_cliques):
        members = [f"n{label + i}" for i in range(clique_size)]
        label += clique_size
        clique = nx.complete_graph(members).edges()
        before.add_edges_from(clique)
        after.add_edges_from(clique)

    edges: List[Edge] = []
    for t in range(1, t_max + 1):
        graph = before if t < switch_at else after
        edges.extend(_both_directions(graph, float(t - 1)))
    return edges, switchers


def create_planted_rank_matrix(n: int, f: int, r: int, noise: float = 0.0,
                               seed: int = 0) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    創建 V = G·F (+ 雜訊) 的非負矩陣；G 為區塊結構（每列只屬於一個角色）

    Args:
        n: 列數
        f: 欄數
        r: 秩
        noise: 雜訊標準差相對於訊號最大值的比例
        seed: 亂數種子

    Returns:
        Tuple[np.ndarray, np.ndarray, np.ndarray]: V, G, F
    """
    rng = np.random.default_rng(seed)
    G = np.zeros((n, r))
    G[np.arange(n), np.arange(n) % r] = rng.uniform(1.0, 2.0, n)
    F = rng.random((r, f))
    V = G @ F
    if noise > 0:
        V = np.clip(V + rng.normal(0.0, noise * V.max(), V.shape), 0.0, None)
    return V, G, F


def create_scaling_network(n_edges: int, t_max: int = 10, avg_degree: int = 10,
                           seed: int = 0) -> List[Edge]:
    """
    創建每個時間步約有 n_edges / t_max 條邊的隨機網路

    Args:
        n_edges: 總邊數
        t_max: 時間步數
        avg_degree: 平均度數（決定節點數）
        seed: 亂數種子

    Returns:
        List[Edge]: 邊列表
    """
    per_step = max(1, n_edges // t_max)
    n_nodes = max(2, 2 * per_step // avg_degree)
    edges: List[Edge] = []
    for t in range(t_max):
        graph = nx.gnm_random_graph(n_nodes, per_step, seed=seed + t, directed=True)
        edges.extend((str(u), str(v), float(t)) for u, v in sorted(graph.edges()))
    return edges


def write_edge_file(edges: List[Edge], path: str) -> str:
    """寫出 src,dst,time 格式的邊列表"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write('# src,dst,time\n')
        for src, dst, t in edges:
            f.write(f"{src},{dst},{t:g}\n")
    return path


def main():
    parser = argparse.ArgumentParser(description='創建測試用的時間網路')
    parser.add_argument('kind', choices=('switch', 'scaling'), help='網路類型')
    parser.add_argument('-o', '--output', default='test_network.csv', help='輸出檔案')
    parser.add_argument('--edges', type=int, default=10000, help='scaling 網路的總邊數')
    parser.add_argument('--seed', type=int, default=0, help='亂數種子')
    args = parser.parse_args()

    if args.kind == 'switch':
        edges, switchers = create_switch_network()
        print(f"轉換節點: {len(switchers)} 個")
    else:
        edges = create_scaling_network(args.edges, seed=args.seed)

    write_edge_file(edges, args.output)
    print(f"測試網路已創建: {args.output}（{len(edges)} 條邊）")


if __name__ == "__main__":
    main()
