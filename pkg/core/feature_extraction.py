"""
遞迴結構特徵模組
從快照圖學習並擷取遞迴結構特徵（度數、自我中心網路特徵及其鄰居聚合），產生節點×特徵矩陣 V_t
"""

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import sparse

from .errors import FeatureDefinitionError, InsufficientDataError, InvalidArgumentError
from .temporal_graph import SnapshotGraph, SnapshotSequence


logger = logging.getLogger(__name__)

UNWEIGHTED_BASE = (
    'in_degree', 'out_degree', 'total_degree',
    'ego_internal', 'ego_in', 'ego_out',
)
WEIGHTED_BASE = (
    'w_in_degree', 'w_out_degree', 'w_total_degree',
    'w_ego_internal', 'w_ego_in', 'w_ego_out',
)
BASE_FEATURES = UNWEIGHTED_BASE + WEIGHTED_BASE
AGGREGATORS = ('sum', 'mean')

DEFAULT_BIN_FRACTION = 0.5
DEFAULT_MAX_DEPTH = 6


@dataclass(frozen=True)
class FeatureDefinition:
    """特徵定義：基礎特徵加上依序套用的鄰居聚合"""

    base: str
    chain: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.base not in BASE_FEATURES:
            raise FeatureDefinitionError(f"未知的基礎特徵: {self.base}")
        object.__setattr__(self, 'chain', tuple(self.chain))
        bad = [a for a in self.chain if a not in AGGREGATORS]
        if bad:
            raise FeatureDefinitionError(f"未知的聚合方式: {', '.join(bad)}")

    @property
    def generation(self) -> int:
        return len(self.chain)

    @property
    def key(self) -> str:
        return '|'.join((self.base,) + self.chain)

    @property
    def display_name(self) -> str:
        name = self.base
        for agg in self.chain:
            name = f"{agg}({name})"
        return name

    def extend(self, aggregator: str) -> 'FeatureDefinition':
        return FeatureDefinition(self.base, self.chain + (aggregator,))

    @classmethod
    def from_key(cls, key: str) -> 'FeatureDefinition':
        parts = [p for p in str(key).split('|')]
        return cls(parts[0], tuple(parts[1:]))

    def __str__(self) -> str:
        return self.key


def definitions_to_json(defs: Sequence[FeatureDefinition]) -> List[Dict[str, object]]:
    return [{'base': d.base, 'chain': list(d.chain)} for d in defs]


def definitions_from_json(data: Iterable[Dict[str, object]]) -> List[FeatureDefinition]:
    return [FeatureDefinition(item['base'], tuple(item.get('chain', ()))) for item in data]


class FeatureMatrix:
    """節點×特徵矩陣 V_t"""

    def __init__(self, timestep: int, nodes: np.ndarray, definitions: Sequence[FeatureDefinition],
                 values: np.ndarray):
        self.timestep = int(timestep)
        self.nodes = np.asarray(nodes, dtype=np.int64)
        self.definitions = list(definitions)
        values = np.asarray(values, dtype=float)
        if values.ndim != 2:
            values = values.reshape(len(self.nodes), len(self.definitions))
        if values.shape != (len(self.nodes), len(self.definitions)):
            raise InvalidArgumentError(
                f"矩陣形狀 {values.shape} 與節點數 {len(self.nodes)} / 特徵數 {len(self.definitions)} 不符")
        if values.size and (not np.all(np.isfinite(values)) or values.min() < 0):
            raise InvalidArgumentError("特徵值必須為非負有限值")
        self.values = values

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    @property
    def keys(self) -> List[str]:
        return [d.key for d in self.definitions]

    def column(self, definition: FeatureDefinition) -> np.ndarray:
        return self.values[:, self.definitions.index(definition)]

    def select(self, indices: Sequence[int]) -> 'FeatureMatrix':
        indices = list(indices)
        return FeatureMatrix(self.timestep, self.nodes, [self.definitions[i] for i in indices],
                             self.values[:, indices])

    def to_frame(self, node_labels: Optional[Sequence[str]] = None) -> pd.DataFrame:
        frame = pd.DataFrame(self.values, columns=self.keys)
        nodes = [node_labels[i] for i in self.nodes] if node_labels is not None else self.nodes
        frame.insert(0, 'node', nodes)
        return frame

    def save_csv(self, path: str) -> None:
        """寫出 CSV，表頭為特徵定義鍵值"""
        self.to_frame().to_csv(path, index=False, lineterminator='\n')

    @classmethod
    def load_csv(cls, path: str, timestep: int) -> 'FeatureMatrix':
        frame = pd.read_csv(path, float_precision='round_trip')
        defs = [FeatureDefinition.from_key(k) for k in frame.columns[1:]]
        nodes = frame['node'].to_numpy(dtype=np.int64)
        values = frame.iloc[:, 1:].to_numpy(dtype=float).reshape(len(nodes), len(defs))
        return cls(timestep, nodes, defs, values)

    def __repr__(self) -> str:
        return f"FeatureMatrix(t={self.timestep}, shape={self.shape})"


def _neighbor_aggregate(neighbors: sparse.csr_matrix, degree: np.ndarray, column: np.ndarray,
                        aggregator: str) -> np.ndarray:
    total = neighbors @ column
    if aggregator == 'sum':
        return np.asarray(total, dtype=float)
    # 沒有鄰居的節點平均值為 0
    return np.divide(total, degree, out=np.zeros_like(total, dtype=float), where=degree > 0)


def _compute_base_columns(snapshot: SnapshotGraph) -> Dict[str, np.ndarray]:
    n = snapshot.n_nodes
    if n == 0:
        return {name: np.zeros(0) for name in BASE_FEATURES}

    weighted = snapshot.adjacency
    pattern = weighted.copy()
    pattern.data = np.ones_like(pattern.data)
    ego = (snapshot.undirected_neighbors + sparse.identity(n, format='csr')).tocsr()

    columns: Dict[str, np.ndarray] = {}
    for prefix, adj in (('', pattern), ('w_', weighted)):
        out_deg = np.asarray(adj.sum(axis=1)).ravel()
        in_deg = np.asarray(adj.sum(axis=0)).ravel()
        # 自我中心網路內部邊: 兩端點都在 N[u] 內的邊
        internal = np.asarray((ego @ adj).multiply(ego).sum(axis=1)).ravel()
        columns[f'{prefix}in_degree'] = in_deg
        columns[f'{prefix}out_degree'] = out_deg
        columns[f'{prefix}total_degree'] = in_deg + out_deg
        columns[f'{prefix}ego_internal'] = internal
        columns[f'{prefix}ego_in'] = np.maximum(ego @ in_deg - internal, 0.0)
        columns[f'{prefix}ego_out'] = np.maximum(ego @ out_deg - internal, 0.0)
    return columns


def base_features(snapshot: SnapshotGraph) -> FeatureMatrix:
    """
    計算基礎特徵（度數與自我中心網路特徵）

    Args:
        snapshot: 快照圖，可為空

    Returns:
        FeatureMatrix: 第 0 代特徵矩陣；只有在存在權重不為 1 的邊時才包含加權特徵
    """
    columns = _compute_base_columns(snapshot)
    names = list(UNWEIGHTED_BASE)
    if snapshot.n_nodes and snapshot.is_weighted:
        names += list(WEIGHTED_BASE)
    defs = [FeatureDefinition(name) for name in names]
    values = np.column_stack([columns[name] for name in names]) if snapshot.n_nodes \
        else np.zeros((0, len(names)))
    return FeatureMatrix(snapshot.index, snapshot.active_nodes, defs, values)


def recursive_aggregate(V: FeatureMatrix, snapshot: SnapshotGraph,
                        columns: Optional[Sequence[int]] = None) -> FeatureMatrix:
    """
    對現有特徵做鄰居 sum / mean 聚合，產生候選遞迴特徵

    Args:
        V: 目前的特徵矩陣，列順序必須與 snapshot.active_nodes 一致
        snapshot: 快照圖
        columns: 要聚合的欄位索引，預設為全部欄位

    Returns:
        FeatureMatrix: 原有欄位加上附加在後的候選欄位
    """
    if not np.array_equal(V.nodes, snapshot.active_nodes):
        raise InvalidArgumentError("特徵矩陣的列順序與快照的活躍節點不一致")
    if columns is None:
        columns = range(len(V.definitions))

    neighbors = snapshot.undirected_neighbors
    degree = np.asarray(neighbors.sum(axis=1)).ravel()
    new_defs = []
    new_cols = []
    for j in columns:
        parent = V.values[:, j]
        for agg in AGGREGATORS:
            new_defs.append(V.definitions[j].extend(agg))
            new_cols.append(_neighbor_aggregate(neighbors, degree, parent, agg))

    if not new_defs:
        return V
    values = np.hstack([V.values, np.column_stack(new_cols)])
    return FeatureMatrix(V.timestep, V.nodes, V.definitions + new_defs, values)


def derive_bin_count(n_rows: int, fraction: float = DEFAULT_BIN_FRACTION) -> int:
    """由比例 p 與列數推得垂直對數分箱的箱數"""
    if n_rows <= 1:
        return 2
    return max(2, int(math.ceil(math.log(n_rows) / -math.log(1.0 - fraction))) + 1)


def log_bin(column: np.ndarray, n_bins: int, fraction: float = DEFAULT_BIN_FRACTION) -> np.ndarray:
    """
    垂直對數分箱：最小的 p 比例節點放入第 0 箱，剩餘節點中的 p 比例放入下一箱，依此類推

    相同的值一定落在同一箱，最後一箱收納所有剩餘節點。

    Args:
        column: 特徵欄位
        n_bins: 箱數上限
        fraction: 每箱放入剩餘節點的比例

    Returns:
        np.ndarray: 每個節點的箱號
    """
    n = column.shape[0]
    bins = np.zeros(n, dtype=np.int64)
    order = np.argsort(column, kind='stable')
    ordered = column[order]

    pos = 0
    b = 0
    while pos < n:
        remaining = n - pos
        if b >= n_bins - 1:
            end = n
        else:
            end = pos + max(1, int(math.floor(fraction * remaining)))
            end = int(np.searchsorted(ordered, ordered[end - 1], side='right'))
        bins[order[pos:end]] = b
        pos = end
        b += 1
    return bins


def prune_features(candidates: FeatureMatrix, s: int,
                   fraction: float = DEFAULT_BIN_FRACTION) -> FeatureMatrix:
    """
    移除冗餘特徵

    分箱後在所有節點上完全一致的欄位互相連結，每個連通分量只保留一個代表
    （世代最低者優先，其次為最早的欄位）。

    Args:
        candidates: 候選特徵矩陣
        s: 箱數（至少 2）
        fraction: 分箱比例

    Returns:
        FeatureMatrix: 保留的欄位，維持原本順序
    """
    if s < 2:
        raise InvalidArgumentError(f"箱數至少為 2: {s}")

    # 分箱結果完全相同即為同一連通分量（一致關係具遞移性）
    representative: Dict[bytes, int] = {}
    for j, definition in enumerate(candidates.definitions):
        signature = log_bin(candidates.values[:, j], s, fraction).tobytes()
        current = representative.get(signature)
        if current is None:
            representative[signature] = j
        elif definition.generation < candidates.definitions[current].generation:
            representative[signature] = j

    retained = sorted(representative.values())
    return candidates.select(retained)


def learn_features(snapshot: SnapshotGraph, s: Optional[int] = None,
                   fraction: float = DEFAULT_BIN_FRACTION,
                   max_depth: int = DEFAULT_MAX_DEPTH) -> Tuple[List[FeatureDefinition], FeatureMatrix]:
    """
    在單一快照上學習特徵集合：交替進行遞迴聚合與剪枝，直到沒有新特徵被保留

    Args:
        snapshot: 非空快照
        s: 箱數，None 表示由 fraction 推得
        fraction: 分箱比例
        max_depth: 遞迴深度上限

    Returns:
        Tuple[List[FeatureDefinition], FeatureMatrix]: 特徵定義與對應矩陣
    """
    if snapshot.is_empty:
        raise InsufficientDataError(f"時間步 {snapshot.index} 的快照為空，無法學習特徵")

    n_bins = s if s is not None else derive_bin_count(snapshot.n_nodes, fraction)
    V = prune_features(base_features(snapshot), n_bins, fraction)
    frontier = list(range(len(V.definitions)))

    depth = 0
    while frontier:
        if depth >= max_depth:
            logger.warning("時間步 %d 達到遞迴深度上限 %d，停止特徵學習", snapshot.index, max_depth)
            break
        candidates = recursive_aggregate(V, snapshot, columns=frontier)
        pruned = prune_features(candidates, n_bins, fraction)
        known = set(V.definitions)
        frontier = [j for j, d in enumerate(pruned.definitions) if d not in known]
        if frontier:
            V = pruned
            depth += 1

    logger.debug("時間步 %d 學得 %d 個特徵（遞迴深度 %d）", snapshot.index, len(V.definitions), depth)
    return list(V.definitions), V


def extract_features(snapshot: SnapshotGraph, defs: Sequence[FeatureDefinition]) -> FeatureMatrix:
    """
    依給定的特徵定義計算特徵矩陣（不學習也不剪枝）

    Args:
        snapshot: 快照圖，不活躍的節點沒有對應的列
        defs: 特徵定義列表

    Returns:
        FeatureMatrix: 特徵矩陣
    """
    if not defs:
        raise InvalidArgumentError("特徵定義列表不可為空")
    for d in defs:
        if d.base not in BASE_FEATURES:
            raise FeatureDefinitionError(f"未知的基礎特徵: {d.base}")

    if snapshot.is_empty:
        return FeatureMatrix(snapshot.index, snapshot.active_nodes, defs, np.zeros((0, len(defs))))

    base = _compute_base_columns(snapshot)
    neighbors = snapshot.undirected_neighbors
    degree = np.asarray(neighbors.sum(axis=1)).ravel()
    cache: Dict[FeatureDefinition, np.ndarray] = {}

    def evaluate(definition: FeatureDefinition) -> np.ndarray:
        if definition in cache:
            return cache[definition]
        if definition.generation == 0:
            column = base[definition.base]
        else:
            parent = FeatureDefinition(definition.base, definition.chain[:-1])
            column = _neighbor_aggregate(neighbors, degree, evaluate(parent), definition.chain[-1])
        cache[definition] = column
        return column

    values = np.column_stack([evaluate(d) for d in defs])
    return FeatureMatrix(snapshot.index, snapshot.active_nodes, defs, values)


class FeatureExtractor:
    """在整個快照序列上學習與擷取特徵"""

    def __init__(self, bin_fraction: float = DEFAULT_BIN_FRACTION, n_bins: Optional[int] = None,
                 max_depth: int = DEFAULT_MAX_DEPTH, workers: int = 1):
        self.bin_fraction = bin_fraction
        self.n_bins = n_bins
        self.max_depth = max_depth
        self.workers = max(1, int(workers))

    def learn(self, snapshot: SnapshotGraph) -> List[FeatureDefinition]:
        if snapshot.is_empty:
            return []
        defs, _ = learn_features(snapshot, self.n_bins, self.bin_fraction, self.max_depth)
        return defs

    def learn_all(self, sequence: SnapshotSequence) -> List[List[FeatureDefinition]]:
        """
        在每個快照上獨立學習特徵（可平行），結果依時間步排序

        Args:
            sequence: 快照序列

        Returns:
            List[List[FeatureDefinition]]: 每個時間步的特徵定義（空快照為空列表）
        """
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            per_timestep = list(pool.map(self.learn, sequence))
        logger.info("特徵學習完成: 各時間步特徵數 %s", [len(d) for d in per_timestep])
        return per_timestep

    def extract_all(self, sequence: SnapshotSequence,
                    defs: Sequence[FeatureDefinition]) -> List[FeatureMatrix]:
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(lambda s: extract_features(s, defs), sequence))


def save_definitions(path: str, defs: Sequence[FeatureDefinition]) -> None:
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(definitions_to_json(defs), f, indent=2)
        f.write('\n')


def load_definitions(path: str) -> List[FeatureDefinition]:
    with open(path, encoding='utf-8') as f:
        return definitions_from_json(json.load(f))
