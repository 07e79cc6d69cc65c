"""
角色解釋模組
以經典節點指標（介數、雙連通分量數、PageRank、聚類係數、度數）解釋角色：求解非負迴歸 G_t·E_t ≈ M_t 並對時間取平均
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import networkx as nx
import numpy as np
import pandas as pd
from scipy.optimize import nnls as scipy_nnls

from .errors import InsufficientDataError, NumericalError, SchemaMismatchError
from .role_discovery import MembershipMatrix
from .temporal_graph import SnapshotGraph, SnapshotSequence


logger = logging.getLogger(__name__)

MEASURES = ('betweenness', 'biconnected components', 'pagerank', 'clustering coefficient', 'degree')
PAGERANK_ALPHA = 0.85
PAGERANK_TOL = 1e-12
DEFAULT_BETWEENNESS_CAP = 50000


class NodeMeasureMatrix:
    """節點×指標矩陣 M_t（欄位順序固定為 MEASURES）"""

    def __init__(self, timestep: int, nodes: np.ndarray, raw: np.ndarray,
                 normalized: bool = True, omitted: Optional[List[str]] = None):
        self.timestep = int(timestep)
        self.nodes = np.asarray(nodes, dtype=np.int64)
        self.raw = np.asarray(raw, dtype=float).reshape(len(self.nodes), len(MEASURES))
        self.normalized = normalized
        self.omitted = list(omitted or [])
        if normalized and self.raw.size:
            peak = self.raw.max(axis=0)
            self.values = np.divide(self.raw, peak, out=np.zeros_like(self.raw), where=peak > 0)
        else:
            self.values = self.raw.copy()

    @property
    def n_rows(self) -> int:
        return int(self.raw.shape[0])

    def column(self, measure: str, raw: bool = True) -> np.ndarray:
        source = self.raw if raw else self.values
        return source[:, MEASURES.index(measure)]

    def to_frame(self, node_labels: Optional[Sequence[str]] = None) -> pd.DataFrame:
        frame = pd.DataFrame(self.raw, columns=list(MEASURES))
        frame.insert(0, 't', self.timestep)
        frame.insert(0, 'node', [node_labels[i] for i in self.nodes] if node_labels is not None else self.nodes)
        return frame

    def __repr__(self) -> str:
        return f"NodeMeasureMatrix(t={self.timestep}, n={self.n_rows}, omitted={self.omitted})"


def compute_node_measures(snapshot: SnapshotGraph, normalize: bool = True,
                          betweenness_node_cap: int = DEFAULT_BETWEENNESS_CAP) -> NodeMeasureMatrix:
    """
    計算快照中每個活躍節點的五項指標

    介數、雙連通分量數與聚類係數在無向簡單投影上計算；PageRank 與度數依照邊的方向。
    節點數超過 betweenness_node_cap 時不計算介數（該欄為 0 並記錄在 omitted）。

    Args:
        snapshot: 快照圖
        normalize: 迴歸前是否把每欄除以最大值
        betweenness_node_cap: 計算介數的節點數上限

    Returns:
        NodeMeasureMatrix: 指標矩陣（raw 保留原始值）
    """
    n = snapshot.n_nodes
    raw = np.zeros((n, len(MEASURES)))
    omitted: List[str] = []
    if n == 0:
        return NodeMeasureMatrix(snapshot.index, snapshot.active_nodes, raw, normalize, omitted)

    undirected = snapshot.to_networkx(directed=False)
    directed = snapshot.to_networkx(directed=True)

    if n <= betweenness_node_cap:
        betweenness = nx.betweenness_centrality(undirected, normalized=False)
        raw[:, 0] = [betweenness[i] for i in range(n)]
    else:
        logger.warning("時間步 %d 有 %d 個節點，超過上限 %d，略過介數", snapshot.index, n, betweenness_node_cap)
        omitted.append('betweenness')

    for component in nx.biconnected_components(undirected):
        for i in component:
            raw[i, 1] += 1

    try:
        pagerank = nx.pagerank(directed, alpha=PAGERANK_ALPHA, tol=PAGERANK_TOL, max_iter=1000, weight='weight')
    except nx.PowerIterationFailedConvergence as e:
        raise NumericalError(f"時間步 {snapshot.index} 的 PageRank 未收斂") from e
    raw[:, 2] = [pagerank[i] for i in range(n)]

    clustering = nx.clustering(undirected)
    raw[:, 3] = [clustering[i] for i in range(n)]

    pattern = snapshot.adjacency.copy()
    pattern.data = np.ones_like(pattern.data)
    raw[:, 4] = np.asarray(pattern.sum(axis=0)).ravel() + np.asarray(pattern.sum(axis=1)).ravel()

    return NodeMeasureMatrix(snapshot.index, snapshot.active_nodes, raw, normalize, omitted)


@dataclass
class RoleExplanation:
    """角色×指標的貢獻矩陣 E_t 與其時間平均"""

    per_timestep: List[np.ndarray]
    timesteps: List[int]
    residuals: Dict[int, float]
    skipped: List[int] = field(default_factory=list)
    measures: Sequence[str] = MEASURES

    @property
    def averaged(self) -> np.ndarray:
        return np.mean(np.stack(self.per_timestep), axis=0)

    @property
    def rank(self) -> int:
        return int(self.per_timestep[0].shape[0])

    def to_frame(self) -> pd.DataFrame:
        """(role, measure, contribution) 長表"""
        averaged = self.averaged
        rows = [
            {'role': k + 1, 'measure': measure, 'contribution': float(averaged[k, j])}
            for k in range(self.rank) for j, measure in enumerate(self.measures)
        ]
        return pd.DataFrame(rows, columns=['role', 'measure', 'contribution'])

    def save_csv(self, path: str) -> None:
        self.to_frame().to_csv(path, index=False, lineterminator='\n')

    def to_dict(self) -> dict:
        return {
            'measures': list(self.measures),
            'averaged': self.averaged.tolist(),
            'timesteps': list(self.timesteps),
            'skipped': list(self.skipped),
            'residuals': {str(t): r for t, r in self.residuals.items()},
        }


def _fit_timestep(G: np.ndarray, M: np.ndarray) -> np.ndarray:
    E = np.zeros((G.shape[1], M.shape[1]))
    for j in range(M.shape[1]):
        if np.any(M[:, j] > 0):
            E[:, j], _ = scipy_nnls(G, M[:, j])
    return E


def interpret_roles(G_seq: Sequence[MembershipMatrix],
                    M_seq: Sequence[NodeMeasureMatrix]) -> RoleExplanation:
    """
    逐時間步以非負最小平方法求解 min_{E≥0} ‖G_t·E − M_t‖²_F，並對 n_t ≥ r 的時間步取平均

    Args:
        G_seq: 成員矩陣序列
        M_seq: 指標矩陣序列（與 G_seq 列順序相同）

    Returns:
        RoleExplanation: 每個時間步的 E_t、殘差與平均

    Raises:
        SchemaMismatchError: 兩個序列的時間步或節點不一致
        InsufficientDataError: 所有時間步都有 n_t < r
    """
    if len(G_seq) != len(M_seq):
        raise SchemaMismatchError(f"成員序列長度 {len(G_seq)} 與指標序列長度 {len(M_seq)} 不符")

    per_timestep, timesteps, skipped = [], [], []
    residuals: Dict[int, float] = {}
    for G, M in zip(G_seq, M_seq):
        if G.timestep != M.timestep or not np.array_equal(G.nodes, M.nodes):
            raise SchemaMismatchError("成員矩陣與指標矩陣的節點不一致", timestep=G.timestep)
        if G.n_rows < G.rank:
            if G.n_rows > 0:
                logger.warning("時間步 %d 只有 %d 個節點（少於 %d 個角色），不納入平均",
                               G.timestep, G.n_rows, G.rank)
            skipped.append(G.timestep)
            continue

        E = _fit_timestep(G.values, M.values)
        if not np.all(np.isfinite(E)):
            raise NumericalError(f"時間步 {G.timestep} 的迴歸出現非有限值")
        per_timestep.append(E)
        timesteps.append(G.timestep)
        residuals[G.timestep] = float(np.linalg.norm(G.values @ E - M.values))

    if not per_timestep:
        raise InsufficientDataError("所有時間步的節點數都少於角色數，無法解釋角色")
    return RoleExplanation(per_timestep, timesteps, residuals, skipped)


def dominant_measure(explanation: RoleExplanation, role: int) -> str:
    """
    角色（從 1 開始編號）平均貢獻最大的指標；同分取欄位順序較前者
    """
    row = explanation.averaged[role - 1]
    return explanation.measures[int(np.argmax(row))]


def role_labels(explanation: RoleExplanation) -> List[Dict[str, object]]:
    """每個角色的主要指標；全零列標記為 degenerate"""
    averaged = explanation.averaged
    return [
        {
            'role': k + 1,
            'measure': dominant_measure(explanation, k + 1),
            'degenerate': not bool(np.any(averaged[k] > 0)),
        }
        for k in range(explanation.rank)
    ]


class RoleInterpreter:
    """節點指標計算與角色解釋"""

    def __init__(self, normalize: bool = True, betweenness_node_cap: int = DEFAULT_BETWEENNESS_CAP,
                 workers: int = 1):
        self.normalize = normalize
        self.betweenness_node_cap = betweenness_node_cap
        self.workers = max(1, int(workers))

    def measures(self, sequence: SnapshotSequence) -> List[NodeMeasureMatrix]:
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            result = list(pool.map(
                lambda s: compute_node_measures(s, self.normalize, self.betweenness_node_cap), sequence))
        logger.info("節點指標計算完成: %d 個時間步", len(result))
        return result

    def explain(self, G_seq: Sequence[MembershipMatrix],
                M_seq: Sequence[NodeMeasureMatrix]) -> RoleExplanation:
        return interpret_roles(G_seq, M_seq)
