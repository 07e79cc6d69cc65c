"""
時序圖模組
負責解析帶時間戳記的邊列表，並切分為依時間排序的快照圖序列
"""

import io
import json
import logging
import math
import os
from dataclasses import dataclass
from functools import cached_property
from typing import BinaryIO, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
from scipy import sparse

from .errors import EdgeParseError, InsufficientDataError, InvalidArgumentError, UnknownNodeError


logger = logging.getLogger(__name__)

SCHEMA_COLUMNS = ('src', 'dst', 'time', 'begin', 'end', 'weight', '_')
ARCHIVE_FILE = 'snapshots.jsonl'
ARCHIVE_MANIFEST = 'snapshots_manifest.json'


@dataclass(frozen=True)
class TemporalEdge:
    """單一時序邊"""

    src: int
    dst: int
    weight: float = 1.0
    begin: float = 0.0
    end: Optional[float] = None

    def __post_init__(self):
        if self.end is None:
            object.__setattr__(self, 'end', self.begin)
        if not (self.weight >= 0 and math.isfinite(self.weight)):
            raise InvalidArgumentError(f"邊權重必須為非負有限值: {self.weight}")
        if self.end < self.begin:
            raise InvalidArgumentError(f"結束時間早於開始時間: [{self.begin}, {self.end}]")

    @property
    def is_instant(self) -> bool:
        return self.end == self.begin


@dataclass(frozen=True)
class EdgeSchema:
    """邊列表欄位對應"""

    columns: Tuple[str, ...]

    @classmethod
    def parse(cls, text: str) -> 'EdgeSchema':
        """
        解析逗號分隔的欄位描述，例如 "src,dst,time" 或 "src,dst,begin,end,weight"

        Args:
            text: 欄位描述字串

        Returns:
            EdgeSchema: 欄位對應
        """
        columns = tuple(c.strip().lower() for c in text.split(',') if c.strip())
        unknown = [c for c in columns if c not in SCHEMA_COLUMNS]
        if unknown:
            raise InvalidArgumentError(f"未知的欄位名稱: {', '.join(unknown)}")
        named = [c for c in columns if c != '_']
        if len(named) != len(set(named)):
            raise InvalidArgumentError(f"欄位名稱重複: {text}")
        if 'src' not in columns or 'dst' not in columns:
            raise InvalidArgumentError("欄位必須包含 src 與 dst")
        has_time = 'time' in columns
        has_interval = 'begin' in columns and 'end' in columns
        if has_time == has_interval:
            raise InvalidArgumentError("欄位必須包含 time，或同時包含 begin 與 end（兩者擇一）")
        return cls(columns)

    def position(self, name: str) -> Optional[int]:
        return self.columns.index(name) if name in self.columns else None


class TemporalEdgeSet:
    """解析後的時序邊集合（以平行陣列儲存）"""

    def __init__(self, src: np.ndarray, dst: np.ndarray, weight: np.ndarray,
                 begin: np.ndarray, end: np.ndarray, node_labels: Sequence[str],
                 malformed_lines: int = 0, first_malformed_line: Optional[int] = None,
                 self_loops_dropped: int = 0):
        self.src = np.asarray(src, dtype=np.int64)
        self.dst = np.asarray(dst, dtype=np.int64)
        self.weight = np.asarray(weight, dtype=float)
        self.begin = np.asarray(begin, dtype=float)
        self.end = np.asarray(end, dtype=float)
        self.node_labels = list(node_labels)
        self.malformed_lines = malformed_lines
        self.first_malformed_line = first_malformed_line
        self.self_loops_dropped = self_loops_dropped

    def __len__(self) -> int:
        return int(self.src.shape[0])

    @property
    def n_nodes(self) -> int:
        return len(self.node_labels)

    def __iter__(self) -> Iterator[TemporalEdge]:
        for i in range(len(self)):
            yield TemporalEdge(int(self.src[i]), int(self.dst[i]), float(self.weight[i]),
                               float(self.begin[i]), float(self.end[i]))

    @classmethod
    def from_edges(cls, edges: Iterable[TemporalEdge], node_labels: Sequence[str]) -> 'TemporalEdgeSet':
        edges = list(edges)
        return cls(
            src=[e.src for e in edges], dst=[e.dst for e in edges],
            weight=[e.weight for e in edges], begin=[e.begin for e in edges],
            end=[e.end for e in edges], node_labels=node_labels,
        )


def _split_line(line: str, delimiter: Optional[str]) -> List[str]:
    if delimiter is not None:
        return [token.strip() for token in line.split(delimiter)]
    if ',' in line:
        return [token.strip() for token in line.split(',')]
    return line.split()


def ingest_edge_list(source: Union[BinaryIO, bytes], schema: Union[EdgeSchema, str],
                     delimiter: Optional[str] = None, strict: bool = False,
                     keep_self_loops: bool = False) -> TemporalEdgeSet:
    """
    解析邊列表位元組串流

    Args:
        source: 二進位串流（或 bytes）
        schema: 欄位對應
        delimiter: 分隔字元，None 表示自動判斷（逗號或空白）
        strict: 嚴格模式下遇到格式錯誤的行即拋出例外
        keep_self_loops: 是否保留自迴圈

    Returns:
        TemporalEdgeSet: 解析結果，節點編號為連續整數

    Raises:
        EdgeParseError: 嚴格模式且有格式錯誤的行
    """
    if isinstance(schema, str):
        schema = EdgeSchema.parse(schema)
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)

    pos = {name: schema.position(name) for name in ('src', 'dst', 'time', 'begin', 'end', 'weight')}
    width = len(schema.columns)

    index: Dict[str, int] = {}
    labels: List[str] = []
    src, dst, weight, begin, end = [], [], [], [], []
    malformed = 0
    first_malformed: Optional[int] = None
    self_loops = 0

    for line_number, raw in enumerate(source, start=1):
        try:
            line = raw.decode('utf-8').strip()
        except UnicodeDecodeError:
            line = None

        if line is not None and (not line or line.startswith('#')):
            continue

        parsed = None
        if line is not None:
            tokens = _split_line(line, delimiter)
            if len(tokens) >= width:
                try:
                    u, v = tokens[pos['src']], tokens[pos['dst']]
                    if pos['time'] is not None:
                        b = e = float(tokens[pos['time']])
                    else:
                        b, e = float(tokens[pos['begin']]), float(tokens[pos['end']])
                    w = float(tokens[pos['weight']]) if pos['weight'] is not None else 1.0
                    if u and v and math.isfinite(b) and math.isfinite(e) and e >= b \
                            and w >= 0 and math.isfinite(w):
                        parsed = (u, v, w, b, e)
                except ValueError:
                    parsed = None

        if parsed is None:
            malformed += 1
            if first_malformed is None:
                first_malformed = line_number
            if strict:
                raise EdgeParseError(f"第 {line_number} 行格式錯誤", line_number=line_number)
            continue

        u, v, w, b, e = parsed
        if u == v and not keep_self_loops:
            self_loops += 1
            continue

        for label in (u, v):
            if label not in index:
                index[label] = len(labels)
                labels.append(label)
        src.append(index[u])
        dst.append(index[v])
        weight.append(w)
        begin.append(b)
        end.append(e)

    if malformed:
        logger.warning("略過 %d 行格式錯誤的資料（第一筆在第 %d 行）", malformed, first_malformed)
    if self_loops:
        logger.info("已移除 %d 條自迴圈", self_loops)
    logger.info("解析完成: %d 條邊, %d 個節點", len(src), len(labels))

    return TemporalEdgeSet(src, dst, weight, begin, end, labels,
                           malformed_lines=malformed, first_malformed_line=first_malformed,
                           self_loops_dropped=self_loops)


def load_edge_file(path: str, schema: Union[EdgeSchema, str], **kwargs) -> TemporalEdgeSet:
    """
    讀取邊列表檔案

    Args:
        path: 檔案路徑
        schema: 欄位對應
        **kwargs: 傳給 ingest_edge_list 的其他參數

    Returns:
        TemporalEdgeSet: 解析結果
    """
    with open(path, 'rb') as f:
        return ingest_edge_list(f, schema, **kwargs)


class SnapshotGraph:
    """單一時間窗內的快照圖（A_t）"""

    def __init__(self, index: int, active_nodes: np.ndarray, adjacency: sparse.csr_matrix):
        self.index = int(index)
        self.active_nodes = np.asarray(active_nodes, dtype=np.int64)
        self.active_nodes.setflags(write=False)
        self.adjacency = sparse.csr_matrix(adjacency, dtype=float)
        self.adjacency.sort_indices()

    @classmethod
    def from_triples(cls, index: int, src: np.ndarray, dst: np.ndarray,
                     weight: np.ndarray) -> 'SnapshotGraph':
        """
        由全域節點編號的 (src, dst, weight) 建立快照（呼叫端須先合併平行邊）

        Args:
            index: 時間步（從 1 開始）
            src: 起點節點編號
            dst: 終點節點編號
            weight: 已合併的權重

        Returns:
            SnapshotGraph: 快照圖
        """
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        weight = np.asarray(weight, dtype=float)
        keep = weight > 0
        src, dst, weight = src[keep], dst[keep], weight[keep]

        active = np.unique(np.concatenate([src, dst]))
        n = active.shape[0]
        rows = np.searchsorted(active, src)
        cols = np.searchsorted(active, dst)
        adjacency = sparse.csr_matrix((weight, (rows, cols)), shape=(n, n))
        return cls(index, active, adjacency)

    @classmethod
    def empty(cls, index: int) -> 'SnapshotGraph':
        return cls(index, np.zeros(0, dtype=np.int64), sparse.csr_matrix((0, 0)))

    @property
    def n_nodes(self) -> int:
        return int(self.active_nodes.shape[0])

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.nnz)

    @property
    def is_empty(self) -> bool:
        return self.n_nodes == 0

    @property
    def is_weighted(self) -> bool:
        return bool(np.any(self.adjacency.data != 1.0))

    @cached_property
    def undirected_neighbors(self) -> sparse.csr_matrix:
        """無向投影鄰接矩陣（0/1，無自迴圈）"""
        pattern = self.adjacency.copy()
        pattern.data = np.ones_like(pattern.data)
        sym = (pattern + pattern.T).tocsr()
        sym = (sym - sparse.diags(sym.diagonal())).tocsr()
        sym.eliminate_zeros()
        sym.data = np.ones_like(sym.data)
        return sym

    def edge_triples(self) -> List[Tuple[int, int, float]]:
        """以全域節點編號列出 (src, dst, weight)，依 (src, dst) 排序"""
        coo = self.adjacency.tocoo()
        src = self.active_nodes[coo.row]
        dst = self.active_nodes[coo.col]
        order = np.lexsort((dst, src))
        return [(int(src[i]), int(dst[i]), float(coo.data[i])) for i in order]

    def local_index(self, node: int) -> Optional[int]:
        pos = int(np.searchsorted(self.active_nodes, node))
        if pos < self.n_nodes and self.active_nodes[pos] == node:
            return pos
        return None

    def to_networkx(self, directed: bool = True) -> nx.Graph:
        """
        轉換為 networkx 圖（節點為本地索引）

        Args:
            directed: True 回傳帶權有向圖，False 回傳無向簡單投影

        Returns:
            nx.Graph: networkx 圖
        """
        if directed:
            graph = nx.DiGraph()
            graph.add_nodes_from(range(self.n_nodes))
            coo = self.adjacency.tocoo()
            graph.add_weighted_edges_from(
                (int(i), int(j), float(w)) for i, j, w in zip(coo.row, coo.col, coo.data)
            )
            return graph
        graph = nx.Graph()
        graph.add_nodes_from(range(self.n_nodes))
        coo = sparse.triu(self.undirected_neighbors).tocoo()
        graph.add_edges_from((int(i), int(j)) for i, j in zip(coo.row, coo.col))
        return graph

    def __eq__(self, other) -> bool:
        if not isinstance(other, SnapshotGraph):
            return NotImplemented
        return (self.index == other.index
                and np.array_equal(self.active_nodes, other.active_nodes)
                and self.edge_triples() == other.edge_triples())

    def __repr__(self) -> str:
        return f"SnapshotGraph(t={self.index}, n={self.n_nodes}, m={self.n_edges})"


class SnapshotSequence:
    """依時間排序、等寬且不重疊的快照序列"""

    def __init__(self, snapshots: Sequence[SnapshotGraph], node_labels: Sequence[str],
                 window_width: float, origin: float, aggregation: str = 'sum'):
        if not snapshots:
            raise InvalidArgumentError("快照序列至少需要一個快照")
        self.snapshots = tuple(snapshots)
        self.node_labels = list(node_labels)
        self.window_width = float(window_width)
        self.origin = float(origin)
        self.aggregation = aggregation
        self._node_index = {label: i for i, label in enumerate(self.node_labels)}

    @property
    def t_max(self) -> int:
        return len(self.snapshots)

    def __len__(self) -> int:
        return self.t_max

    def __iter__(self) -> Iterator[SnapshotGraph]:
        return iter(self.snapshots)

    def __getitem__(self, i: int) -> SnapshotGraph:
        return self.snapshots[i]

    def node_id(self, label: str) -> int:
        """
        查詢節點標籤對應的編號

        Raises:
            UnknownNodeError: 節點不存在
        """
        try:
            return self._node_index[str(label)]
        except KeyError:
            raise UnknownNodeError(f"未知的節點: {label}") from None

    def active_counts(self) -> List[int]:
        return [s.n_nodes for s in self.snapshots]

    def stats(self) -> Dict[str, object]:
        return {
            'nodes': len(self.node_labels),
            'edges': int(sum(s.n_edges for s in self.snapshots)),
            't_max': self.t_max,
            'n_t': self.active_counts(),
            'window_width': self.window_width,
            'origin': self.origin,
        }

    def __eq__(self, other) -> bool:
        if not isinstance(other, SnapshotSequence):
            return NotImplemented
        return (self.node_labels == other.node_labels
                and self.window_width == other.window_width
                and self.origin == other.origin
                and self.snapshots == other.snapshots)


def bin_snapshots(edges: TemporalEdgeSet, window_width: float, aggregation: str = 'sum',
                  origin: Optional[float] = None) -> SnapshotSequence:
    """
    將時序邊切分為等寬的快照序列

    持續邊會出現在所有與其時間區間重疊的時間窗；同一時間窗內的平行邊依 aggregation 合併。

    Args:
        edges: 時序邊集合
        window_width: 時間窗寬度（秒）
        aggregation: 平行邊合併方式 sum / max / count
        origin: 第一個時間窗的起點，預設為最早的開始時間

    Returns:
        SnapshotSequence: 快照序列（空時間窗保留為空快照）
    """
    if not window_width > 0:
        raise InvalidArgumentError(f"時間窗寬度必須大於 0: {window_width}")
    if aggregation not in ('sum', 'max', 'count'):
        raise InvalidArgumentError(f"不支援的合併方式: {aggregation}")
    if len(edges) == 0:
        raise InsufficientDataError("邊集合為空，無法切分快照")

    start = float(edges.begin.min())
    if origin is None:
        origin = start
    elif origin > start:
        raise InvalidArgumentError(f"origin ({origin}) 晚於最早的邊 ({start})")

    first = np.floor((edges.begin - origin) / window_width).astype(np.int64)
    last = np.floor((edges.end - origin) / window_width).astype(np.int64)
    t_max = int(last.max()) + 1

    # 展開持續邊：每條邊對每個重疊的時間窗各產生一筆
    counts = last - first + 1
    total = int(counts.sum())
    owner = np.repeat(np.arange(len(edges)), counts)
    offsets = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    window = first[owner] + offsets
    src = edges.src[owner]
    dst = edges.dst[owner]
    weight = edges.weight[owner]

    order = np.lexsort((dst, src, window))
    window, src, dst, weight = window[order], src[order], dst[order], weight[order]

    if total:
        boundary = np.ones(total, dtype=bool)
        boundary[1:] = (window[1:] != window[:-1]) | (src[1:] != src[:-1]) | (dst[1:] != dst[:-1])
        starts = np.flatnonzero(boundary)
        if aggregation == 'sum':
            agg = np.add.reduceat(weight, starts)
        elif aggregation == 'max':
            agg = np.maximum.reduceat(weight, starts)
        else:
            agg = np.diff(np.append(starts, total)).astype(float)
        window, src, dst = window[starts], src[starts], dst[starts]
    else:
        agg = weight

    snapshots = []
    bounds = np.searchsorted(window, np.arange(t_max + 1))
    for t in range(t_max):
        lo, hi = bounds[t], bounds[t + 1]
        if lo == hi:
            snapshots.append(SnapshotGraph.empty(t + 1))
        else:
            snapshots.append(SnapshotGraph.from_triples(t + 1, src[lo:hi], dst[lo:hi], agg[lo:hi]))

    empty = sum(1 for s in snapshots if s.is_empty)
    logger.info("切分完成: %d 個快照（%d 個為空），時間窗寬度 %s", t_max, empty, window_width)
    return SnapshotSequence(snapshots, edges.node_labels, window_width, origin, aggregation)


def save_snapshot_archive(sequence: SnapshotSequence, directory: str) -> List[str]:
    """
    將快照序列寫成 JSON Lines 封存檔與 JSON 說明檔

    Args:
        sequence: 快照序列
        directory: 輸出目錄

    Returns:
        List[str]: 寫出的檔案路徑
    """
    os.makedirs(directory, exist_ok=True)
    archive_path = os.path.join(directory, ARCHIVE_FILE)
    manifest_path = os.path.join(directory, ARCHIVE_MANIFEST)

    with open(archive_path, 'w', encoding='utf-8', newline='\n') as f:
        for snapshot in sequence:
            record = {'t': snapshot.index, 'edges': [list(e) for e in snapshot.edge_triples()]}
            f.write(json.dumps(record, sort_keys=True) + '\n')

    manifest = {
        'nodes': sequence.node_labels,
        'window_width': sequence.window_width,
        'origin': sequence.origin,
        't_max': sequence.t_max,
        'aggregation': sequence.aggregation,
    }
    with open(manifest_path, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(manifest, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write('\n')

    return [archive_path, manifest_path]


def load_snapshot_archive(directory: str) -> SnapshotSequence:
    """
    讀取 save_snapshot_archive 寫出的封存檔

    Args:
        directory: 封存目錄

    Returns:
        SnapshotSequence: 快照序列
    """
    with open(os.path.join(directory, ARCHIVE_MANIFEST), encoding='utf-8') as f:
        manifest = json.load(f)

    snapshots = []
    with open(os.path.join(directory, ARCHIVE_FILE), encoding='utf-8') as f:
        for line in f:
            if not line.strip():
                continue
            record = json.loads(line)
            triples = record['edges']
            if not triples:
                snapshots.append(SnapshotGraph.empty(record['t']))
                continue
            src, dst, weight = zip(*triples)
            snapshots.append(SnapshotGraph.from_triples(record['t'], src, dst, weight))

    if len(snapshots) != manifest['t_max']:
        raise EdgeParseError(f"封存檔快照數 {len(snapshots)} 與說明檔 t_max {manifest['t_max']} 不符")

    return SnapshotSequence(snapshots, manifest['nodes'], manifest['window_width'],
                            manifest['origin'], manifest.get('aggregation', 'sum'))
