"""
角色動態模組
在整個快照序列上建立全域特徵與角色基底，追蹤各時間步的角色成員，並計算角色重要性、節點軌跡與行為變化分數
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.spatial.distance import pdist, squareform

from .errors import InsufficientDataError, InvalidArgumentError, SchemaMismatchError, UnknownNodeError
from .feature_extraction import FeatureDefinition, FeatureMatrix
from .role_discovery import (MembershipMatrix, RoleFactorizer, RoleModel, estimate_memberships,
                             normalize_rows)


logger = logging.getLogger(__name__)

METRICS = ('euclidean', 'cosine', 'hellinger')
DEFAULT_METRIC = 'hellinger'
DYNAMICS_CLASSES = ('stationary', 'increasing', 'decreasing', 'spike', 'volatile')


@dataclass
class GlobalFeatureSet:
    """各時間步特徵定義的聯集 L*"""

    defs: List[FeatureDefinition]
    provenance: Dict[FeatureDefinition, List[int]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.defs)


def union_features(per_timestep_defs: Sequence[Sequence[FeatureDefinition]],
                   timesteps: Optional[Sequence[int]] = None) -> GlobalFeatureSet:
    """
    合併各時間步的特徵定義，依第一次出現的順序去除重複

    Args:
        per_timestep_defs: 每個時間步的特徵定義
        timesteps: 對應的時間步編號，預設為 1..len

    Returns:
        GlobalFeatureSet: 聯集與每個定義被發現的時間步
    """
    if not per_timestep_defs:
        raise InvalidArgumentError("至少需要一個時間步的特徵定義")
    if timesteps is None:
        timesteps = range(1, len(per_timestep_defs) + 1)

    defs: List[FeatureDefinition] = []
    provenance: Dict[FeatureDefinition, List[int]] = {}
    for t, definitions in zip(timesteps, per_timestep_defs):
        for d in definitions:
            if d not in provenance:
                provenance[d] = []
                defs.append(d)
            if t not in provenance[d]:
                provenance[d].append(int(t))
    return GlobalFeatureSet(defs, provenance)


@dataclass
class StackedFeatures:
    """垂直堆疊的全域特徵矩陣 V_g，保留每列來源 (t, node)"""

    values: np.ndarray
    definitions: List[FeatureDefinition]
    provenance: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape


def stack_global(V_seq: Sequence[FeatureMatrix]) -> StackedFeatures:
    """
    將各時間步的特徵矩陣依序垂直合併

    Raises:
        SchemaMismatchError: 欄位定義不一致
    """
    if not V_seq:
        raise InvalidArgumentError("沒有可堆疊的特徵矩陣")
    definitions = V_seq[0].definitions
    for V in V_seq[1:]:
        if V.definitions != definitions:
            raise SchemaMismatchError("特徵欄位與第一個時間步不一致", timestep=V.timestep)

    values = np.vstack([V.values for V in V_seq])
    provenance = np.concatenate([
        np.column_stack([np.full(len(V.nodes), V.timestep, dtype=np.int64), V.nodes])
        for V in V_seq
    ]) if sum(len(V.nodes) for V in V_seq) else np.zeros((0, 2), dtype=np.int64)
    return StackedFeatures(values, list(definitions), provenance)


def learn_global_roles(V_g: Union[StackedFeatures, np.ndarray], r_min: int = 1, r_max: int = 8,
                       factorizer: Optional[RoleFactorizer] = None,
                       feature_defs: Optional[Sequence[FeatureDefinition]] = None) -> RoleModel:
    """在 V_g 上以 MDL 選擇角色數並學習全域基底 F_g"""
    factorizer = factorizer or RoleFactorizer()
    if isinstance(V_g, StackedFeatures):
        feature_defs = V_g.definitions
        V_g = V_g.values
    return factorizer.select_rank(V_g, r_min, r_max, feature_defs)


def track_memberships(V_seq: Sequence[FeatureMatrix], model: RoleModel,
                      workers: int = 1) -> List[MembershipMatrix]:
    """
    固定全域基底，逐時間步估計成員矩陣（可平行），輸出依時間步排序

    Args:
        V_seq: 各時間步的特徵矩陣
        model: 全域角色模型
        workers: 執行緒數

    Returns:
        List[MembershipMatrix]: 未正規化的 G_t；空快照得到 0 列矩陣
    """
    with ThreadPoolExecutor(max_workers=max(1, int(workers))) as pool:
        memberships = list(pool.map(lambda V: estimate_memberships(V, model), V_seq))
    logger.info("成員追蹤完成: %d 個時間步", len(memberships))
    return memberships


def role_importance(G_t: MembershipMatrix, n_t: Optional[int] = None) -> np.ndarray:
    """
    計算 x_t = G_tᵀ·1 / n_t

    正規化成員的全零列（無法分配角色的節點）不計入分母，使非空時間步的總和為 1；
    此時分母是有角色的列數而非 n_t。

    Args:
        G_t: 成員矩陣
        n_t: 活躍節點數，必須等於 G_t 的列數（預設即為列數）

    Returns:
        np.ndarray: 長度 r 的角色重要性；n_t = 0 時為全零

    Raises:
        InvalidArgumentError: n_t 與列數不符
    """
    if n_t is not None and int(n_t) != G_t.n_rows:
        raise InvalidArgumentError(f"n_t={n_t} 與時間步 {G_t.timestep} 的成員列數 {G_t.n_rows} 不符")
    n_t = G_t.n_rows
    if n_t == 0:
        return np.zeros(G_t.rank)
    if G_t.normalized:
        assigned = int(np.count_nonzero(G_t.values.sum(axis=1) > 0))
        if assigned == 0:
            return np.zeros(G_t.rank)
        return G_t.values.sum(axis=0) / assigned
    return G_t.values.sum(axis=0) / n_t


@dataclass
class RoleImportanceSeries:
    """t_max × r 角色重要性序列"""

    values: np.ndarray
    timesteps: List[int]
    empty: List[bool]

    @property
    def rank(self) -> int:
        return int(self.values.shape[1])

    def to_frame(self) -> pd.DataFrame:
        """整理成 (t, role, value) 長表"""
        rows = [
            {'t': t, 'role': k + 1, 'value': float(self.values[i, k])}
            for i, t in enumerate(self.timesteps) for k in range(self.rank)
        ]
        return pd.DataFrame(rows, columns=['t', 'role', 'value'])

    def to_dict(self) -> dict:
        return {
            'timesteps': list(self.timesteps),
            'values': self.values.tolist(),
            'empty': list(self.empty),
        }


def importance_series(G_seq: Sequence[MembershipMatrix]) -> RoleImportanceSeries:
    """以正規化成員計算每個時間步的角色重要性"""
    rank = max((G.rank for G in G_seq), default=0)
    values = np.zeros((len(G_seq), rank))
    for i, G in enumerate(G_seq):
        values[i, :G.rank] = role_importance(G.normalize())
    return RoleImportanceSeries(values, [G.timestep for G in G_seq], [G.n_rows == 0 for G in G_seq])


@dataclass
class NodeTrajectory:
    """單一節點在各時間步的成員列；不活躍時為 None"""

    node: int
    timesteps: List[int]
    memberships: List[Optional[np.ndarray]]

    @property
    def active_timesteps(self) -> List[int]:
        return [t for t, m in zip(self.timesteps, self.memberships) if m is not None]

    def is_active(self, t: int) -> bool:
        return self.memberships[self.timesteps.index(t)] is not None

    def normalized(self) -> List[Optional[np.ndarray]]:
        return [None if m is None else normalize_rows(m[np.newaxis, :])[0] for m in self.memberships]


def node_trajectory(G_seq: Sequence[MembershipMatrix], node: int, n_nodes: int) -> NodeTrajectory:
    """
    取出節點在每個時間步的成員列

    Args:
        G_seq: 各時間步的成員矩陣
        node: 節點編號
        n_nodes: 節點字典大小

    Raises:
        UnknownNodeError: 節點不在節點字典中
    """
    if not 0 <= int(node) < int(n_nodes):
        raise UnknownNodeError(f"未知的節點編號: {node}")
    memberships = []
    for G in G_seq:
        row = G.row_for(int(node))
        memberships.append(None if row is None else row.copy())
    return NodeTrajectory(int(node), [G.timestep for G in G_seq], memberships)


def _check_metric(metric: str) -> None:
    if metric not in METRICS:
        raise InvalidArgumentError(f"不支援的距離: {metric}")


def vector_distance(a: np.ndarray, b: np.ndarray, metric: str = DEFAULT_METRIC) -> float:
    """
    兩個非負向量的距離

    cosine 為 1 − cos；兩個零向量距離 0，零向量與非零向量距離 1。
    hellinger 先把向量正規化為機率分布，值域 [0, 1]。
    """
    _check_metric(metric)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if metric == 'euclidean':
        return float(np.linalg.norm(a - b))

    a_zero = not np.any(a > 0)
    b_zero = not np.any(b > 0)
    if a_zero or b_zero:
        return 0.0 if a_zero and b_zero else 1.0
    if metric == 'cosine':
        cos = float(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b))
        return float(min(max(1.0 - cos, 0.0), 1.0))
    p = a / a.sum()
    q = b / b.sum()
    return float(min(np.sqrt(0.5 * np.sum((np.sqrt(p) - np.sqrt(q)) ** 2)), 1.0))


def pairwise_distances(X: np.ndarray, metric: str = DEFAULT_METRIC) -> np.ndarray:
    """列與列之間的距離矩陣（對稱、對角為 0）"""
    _check_metric(metric)
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if n < 2:
        return np.zeros((n, n))

    if metric == 'euclidean':
        return squareform(pdist(X, 'euclidean'))

    norms = np.linalg.norm(X, axis=1)
    zero = norms == 0
    if metric == 'cosine':
        unit = np.divide(X, norms[:, np.newaxis], out=np.zeros_like(X), where=~zero[:, np.newaxis])
        D = np.clip(1.0 - unit @ unit.T, 0.0, 1.0)
    else:
        P = np.sqrt(normalize_rows(X))
        D = np.clip(squareform(pdist(P, 'euclidean')) / math.sqrt(2.0), 0.0, 1.0)
    # 零向量的約定
    D[zero, :] = 1.0
    D[:, zero] = 1.0
    D[np.ix_(zero, zero)] = 0.0
    np.fill_diagonal(D, 0.0)
    return np.maximum(D, D.T)


@dataclass
class DistanceMatrix:
    """角色、節點或時間步之間的距離矩陣"""

    axis: str
    values: np.ndarray
    labels: List[object]
    metric: str

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, index=self.labels, columns=self.labels)


def _row_max_normalize(X: np.ndarray) -> np.ndarray:
    peak = X.max(axis=1, keepdims=True) if X.size else np.ones((X.shape[0], 1))
    return np.divide(X, peak, out=np.zeros_like(X), where=peak > 0)


def role_distance(model: RoleModel, metric: str = DEFAULT_METRIC) -> DistanceMatrix:
    """角色基底列（各列除以其最大值）之間的距離"""
    values = pairwise_distances(_row_max_normalize(model.basis), metric)
    return DistanceMatrix('role', values, list(range(1, model.rank + 1)), metric)


def node_distance(G_t: MembershipMatrix, metric: str = DEFAULT_METRIC) -> DistanceMatrix:
    """同一時間步節點之間以正規化成員列計算的距離"""
    values = pairwise_distances(G_t.normalize().values, metric)
    return DistanceMatrix('node', values, [int(v) for v in G_t.nodes], metric)


def time_distance(series: RoleImportanceSeries, metric: str = DEFAULT_METRIC) -> DistanceMatrix:
    """時間步之間以角色重要性向量計算的距離"""
    values = pairwise_distances(series.values, metric)
    return DistanceMatrix('time', values, list(series.timesteps), metric)


@dataclass
class ChangeScores:
    """節點的逐步行為變化分數；score 屬於配對中較晚的時間步"""

    node: int
    timesteps: List[int]
    scores: np.ndarray
    spans_gap: List[bool]
    metric: str

    @property
    def argmax(self) -> int:
        # 同分取較早的時間步
        return int(self.timesteps[int(np.argmax(self.scores))])

    @property
    def max_score(self) -> float:
        return float(self.scores.max())

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'node': self.node,
            't': self.timesteps,
            'score': self.scores,
            'spans_gap': self.spans_gap,
        }, columns=['node', 't', 'score', 'spans_gap'])


def behavior_change_score(traj: NodeTrajectory, metric: str = DEFAULT_METRIC) -> ChangeScores:
    """
    比較連續兩個活躍時間步的正規化成員列

    跨越不活躍時間步的配對仍計分，但標記 spans_gap。

    Raises:
        InsufficientDataError: 活躍時間步少於 2 個
    """
    _check_metric(metric)
    rows = traj.normalized()
    active = [i for i, m in enumerate(rows) if m is not None]
    if len(active) < 2:
        raise InsufficientDataError(f"節點 {traj.node} 的活躍時間步少於 2 個")

    timesteps, scores, gaps = [], [], []
    for prev, cur in zip(active, active[1:]):
        timesteps.append(traj.timesteps[cur])
        scores.append(vector_distance(rows[prev], rows[cur], metric))
        gaps.append(cur - prev > 1)
    return ChangeScores(traj.node, timesteps, np.asarray(scores), gaps, metric)


@dataclass
class ImportanceShift:
    """相鄰時間步角色重要性的 L1 變化量"""

    timesteps: List[int]
    shifts: np.ndarray

    @property
    def argmax(self) -> Optional[int]:
        """變化量最大的時間步；沒有任何變化時為 None"""
        if not len(self.shifts) or not self.shifts.max() > 0:
            return None
        return int(self.timesteps[int(np.argmax(self.shifts))])


def importance_shift(series: RoleImportanceSeries) -> ImportanceShift:
    """‖x_t − x_{t−1}‖₁，t = 2..t_max"""
    shifts = np.abs(np.diff(series.values, axis=0)).sum(axis=1) if len(series.timesteps) > 1 \
        else np.zeros(0)
    return ImportanceShift(list(series.timesteps[1:]), shifts)


def _dominant_period(y: np.ndarray) -> Tuple[Optional[int], float]:
    """
    落差 2..⌊T/2⌋ 中自相關最大的落差與其值

    只考慮較短落差中曾出現負自相關的落差，單純的水準位移不算週期。
    """
    d = y - y.mean()
    energy = float(np.dot(d, d))
    best, best_acf = None, 0.0
    if energy <= 0:
        return best, best_acf
    acf = [float(np.dot(d[:-lag], d[lag:])) / energy for lag in range(1, len(d) // 2 + 1)]
    for lag in range(2, len(acf) + 1):
        value = acf[lag - 1]
        if value > best_acf and min(acf[:lag - 1]) < 0:
            best, best_acf = lag, value
    return best, best_acf


def classify_role_dynamics(series: RoleImportanceSeries, stationary_cv: float = 0.1,
                           trend_change: float = 0.5, trend_r2: float = 0.6,
                           spike_z: float = 2.5, periodic_acf: float = 0.5) -> List[Dict[str, object]]:
    """
    依角色重要性的變化型態分類每個角色

    只使用非空時間步。依序判斷：變異係數低於 stationary_cv 為 stationary；
    線性趨勢的總變化相對平均值超過 trend_change 且 R² 達 trend_r2 為 increasing / decreasing；
    最大 z 分數達 spike_z 為 spike；落差 2 到 ⌊T/2⌋ 的自相關最大值達 periodic_acf 為 periodic；
    其餘為 volatile。

    Returns:
        List[Dict]: 每個角色一筆 {role, class, slope, cv, max_z, period}
    """
    mask = ~np.asarray(series.empty, dtype=bool)
    t = np.asarray(series.timesteps, dtype=float)[mask]
    results = []
    for k in range(series.rank):
        y = series.values[mask, k]
        mean = float(y.mean()) if y.size else 0.0
        std = float(y.std()) if y.size else 0.0
        slope, cv, max_z, r2 = 0.0, 0.0, 0.0, 0.0
        period, acf = None, 0.0
        if mean > 0 and y.size > 1:
            cv = std / mean
            slope = float(np.polyfit(t, y, 1)[0])
            fitted = mean + slope * (t - t.mean())
            total = float(np.sum((y - mean) ** 2))
            r2 = 1.0 - float(np.sum((y - fitted) ** 2)) / total if total > 0 else 0.0
            max_z = float(np.max(np.abs(y - mean)) / std) if std > 0 else 0.0
            period, acf = _dominant_period(y)

        if mean == 0 or cv < stationary_cv:
            label = 'stationary'
        elif abs(slope) * (t[-1] - t[0]) / mean >= trend_change and r2 >= trend_r2:
            label = 'increasing' if slope > 0 else 'decreasing'
        elif max_z >= spike_z:
            label = 'spike'
        elif acf >= periodic_acf:
            label = 'periodic'
        else:
            label = 'volatile'
        results.append({'role': k + 1, 'class': label, 'slope': slope, 'cv': cv, 'max_z': max_z,
                        'period': period if label == 'periodic' else None})
    return results


def rank_changed_nodes(trajectories: Sequence[NodeTrajectory], metric: str = DEFAULT_METRIC,
                       top_k: Optional[int] = None) -> List[ChangeScores]:
    """
    依最大行為變化分數排序節點（異常候選）

    活躍時間步不足 2 個的節點略過。同分依節點編號排序。
    """
    scored = []
    for traj in trajectories:
        if len(traj.active_timesteps) < 2:
            continue
        scored.append(behavior_change_score(traj, metric))
    scored.sort(key=lambda s: (-s.max_score, s.node))
    return scored if top_k is None else scored[:top_k]


@dataclass
class DriftResult:
    """逐時間步重新擬合的結果"""

    models: List[Optional[RoleModel]]
    ranks: List[int]
    track_assignment: List[List[int]]
    memberships: List[MembershipMatrix]
    series: RoleImportanceSeries
    heuristic_matching: bool = True

    @property
    def n_tracks(self) -> int:
        return self.series.rank


def refit_per_timestep(V_seq: Sequence[FeatureMatrix], factorizer: RoleFactorizer,
                       r_min: int = 1, r_max: int = 8, match_metric: str = DEFAULT_METRIC,
                       new_track_distance: float = 0.5) -> DriftResult:
    """
    角色可漂移模式：每個時間步各自以 MDL 擬合角色模型，再以貪婪配對把角色串成跨時間的角色軌道

    配對以角色基底列（除以列最大值）的距離為準，從最小距離開始配對；
    距離超過 new_track_distance 或沒有可用軌道的角色開新軌道。

    Args:
        V_seq: 各時間步的特徵矩陣（共同欄位）
        factorizer: 角色學習器
        r_min: 最小角色數
        r_max: 最大角色數（依各時間步大小自動下修）
        match_metric: 配對使用的距離
        new_track_distance: 開新軌道的距離門檻

    Returns:
        DriftResult: 各時間步的模型、角色數、軌道對應與對齊後的成員矩陣
    """
    _check_metric(match_metric)
    models: List[Optional[RoleModel]] = []
    assignments: List[List[int]] = []
    prototypes: List[np.ndarray] = []

    for V in V_seq:
        n, f = V.shape
        upper = min(r_max, min(n, f) - 1)
        if upper < max(r_min, 1):
            logger.warning("時間步 %d 太小（%d×%d），略過重新擬合", V.timestep, n, f)
            models.append(None)
            assignments.append([])
            continue

        model = factorizer.select_rank(V.values, max(r_min, 1), upper, V.definitions)
        rows = _row_max_normalize(model.basis)
        assignment = [-1] * model.rank
        if prototypes:
            D = np.array([[vector_distance(row, proto, match_metric) for proto in prototypes] for row in rows])
            used = set()
            for flat in np.argsort(D, axis=None, kind='stable'):
                k, track = divmod(int(flat), len(prototypes))
                if assignment[k] >= 0 or track in used or D[k, track] > new_track_distance:
                    continue
                assignment[k] = track
                used.add(track)
        for k in range(model.rank):
            if assignment[k] < 0:
                assignment[k] = len(prototypes)
                prototypes.append(rows[k])
            else:
                prototypes[assignment[k]] = rows[k]

        models.append(model)
        assignments.append(assignment)

    n_tracks = len(prototypes)
    aligned = align_drift_memberships(V_seq, models, assignments, n_tracks)
    ranks = [0 if m is None else m.rank for m in models]
    logger.info("重新擬合完成: 各時間步角色數 %s，共 %d 條角色軌道", ranks, n_tracks)
    return DriftResult(models, ranks, assignments, aligned, importance_series(aligned))


def align_drift_memberships(V_seq: Sequence[FeatureMatrix], models: Sequence[Optional[RoleModel]],
                            assignments: Sequence[Sequence[int]], n_tracks: int) -> List[MembershipMatrix]:
    """以各時間步自己的模型估計成員，再依角色軌道對應合併成 n_tracks 欄"""
    aligned = []
    for V, model, assignment in zip(V_seq, models, assignments):
        values = np.zeros((len(V.nodes), n_tracks))
        if model is not None:
            G = estimate_memberships(V, model)
            for k, track in enumerate(assignment):
                values[:, track] += G.values[:, k]
        aligned.append(MembershipMatrix(V.timestep, V.nodes, values))
    return aligned


class DynamicsAnalyzer:
    """成員追蹤與動態分析"""

    def __init__(self, metric: str = DEFAULT_METRIC, workers: int = 1):
        _check_metric(metric)
        self.metric = metric
        self.workers = max(1, int(workers))

    def track(self, V_seq: Sequence[FeatureMatrix], model: RoleModel) -> List[MembershipMatrix]:
        return track_memberships(V_seq, model, self.workers)

    def trajectories(self, G_seq: Sequence[MembershipMatrix], n_nodes: int) -> List[NodeTrajectory]:
        return [node_trajectory(G_seq, node, n_nodes) for node in range(n_nodes)]

    def analyze(self, G_seq: Sequence[MembershipMatrix], n_nodes: int,
                top_k: Optional[int] = 20) -> Dict[str, object]:
        """
        計算重要性序列、全域變化點、角色動態分類與變化最大的節點

        Returns:
            Dict: series / shift / classes / trajectories / scores / top_changed
        """
        series = importance_series(G_seq)
        trajectories = self.trajectories(G_seq, n_nodes)
        scores = rank_changed_nodes(trajectories, self.metric)
        return {
            'series': series,
            'shift': importance_shift(series),
            'classes': classify_role_dynamics(series),
            'trajectories': trajectories,
            'scores': scores,
            'top_changed': scores if top_k is None else scores[:top_k],
        }
