"""
角色探索模組
以非負矩陣分解把節點×特徵矩陣分解為角色成員矩陣與角色×特徵基底，並以 MDL 自動選擇角色數
"""

import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.cluster.vq import kmeans2
from scipy.optimize import nnls as scipy_nnls

from .errors import InvalidArgumentError, NumericalError, SchemaMismatchError
from .feature_extraction import FeatureDefinition, FeatureMatrix, definitions_from_json, definitions_to_json


logger = logging.getLogger(__name__)

DEFAULT_MAX_ITERS = 200
DEFAULT_TOL = 1e-4
DEFAULT_RESTARTS = 3
DEFAULT_BITS = 4
EPS = 1e-12
INITS = ('random', 'kmeans')


@dataclass
class NmfResult:
    """一次 NMF 的結果"""

    G: np.ndarray
    F: np.ndarray
    objective_trace: List[float]
    iterations: int
    converged: bool

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]


def _objective(V: np.ndarray, G: np.ndarray, F: np.ndarray) -> float:
    return 0.5 * float(np.sum((V - G @ F) ** 2))


def _check_nonnegative(V: np.ndarray, name: str = 'V') -> np.ndarray:
    V = np.asarray(V, dtype=float)
    if V.ndim != 2:
        raise InvalidArgumentError(f"{name} 必須是二維矩陣")
    if not np.all(np.isfinite(V)):
        raise InvalidArgumentError(f"{name} 含有非有限值")
    if V.size and V.min() < 0:
        raise InvalidArgumentError(f"{name} 含有負值")
    return V


def nmf(V: np.ndarray, r: int, max_iters: int = DEFAULT_MAX_ITERS, tol: float = DEFAULT_TOL,
        seed: int = 0, init: str = 'random') -> NmfResult:
    """
    以 Lee-Seung 乘法更新最小化 ½‖V − GF‖²_F

    Args:
        V: 非負矩陣 (n × f)
        r: 角色數，必須小於 min(n, f)
        max_iters: 最大迭代次數
        tol: 目標函數相對下降量低於此值即停止
        seed: 初始化亂數種子
        init: random 為 (0, 1] 均勻分布；kmeans 以列方向的 k-means++ 中心作為 F，
            G 取對應的非負最小平方解（方向不足 r 個時退回 random）

    Returns:
        NmfResult: G (n × r)、F (r × f) 與每次迭代的目標函數值
    """
    V = _check_nonnegative(V)
    n, f = V.shape
    if r < 1 or r >= min(n, f):
        raise InvalidArgumentError(f"角色數 r={r} 必須滿足 1 ≤ r < min(n, f) = {min(n, f)}")
    if max_iters < 1:
        raise InvalidArgumentError(f"max_iters 至少為 1: {max_iters}")
    if not tol > 0:
        raise InvalidArgumentError(f"tol 必須大於 0: {tol}")
    if init not in INITS:
        raise InvalidArgumentError(f"不支援的初始化方式: {init}")

    start = _cluster_init(V, r, np.random.default_rng(seed)) if init == 'kmeans' else None
    if start is None:
        # (0, 1] 均勻分布
        rng = np.random.default_rng(seed)
        G = 1.0 - rng.random((n, r))
        F = 1.0 - rng.random((r, f))
    else:
        G, F = start

    trace = [_objective(V, G, F)]
    converged = False
    iterations = 0
    for iterations in range(1, max_iters + 1):
        # 分子分母同加 EPS，目標函數單調不增
        F *= (G.T @ V + EPS) / (G.T @ G @ F + EPS)
        G *= (V @ F.T + EPS) / (G @ (F @ F.T) + EPS)

        current = _objective(V, G, F)
        if not np.isfinite(current):
            raise NumericalError(f"NMF 在第 {iterations} 次迭代出現非有限值")
        previous = trace[-1]
        trace.append(current)
        if current == 0.0 or (previous - current) / max(previous, EPS) < tol:
            converged = True
            break

    return NmfResult(G, F, trace, iterations, converged)


def solve_rows(V: np.ndarray, F: np.ndarray) -> np.ndarray:
    """
    固定 F，逐列以非負最小平方法求 G；相同的列只解一次，結果也完全相同

    Args:
        V: 非負矩陣 (n × f)
        F: 基底 (r × f)

    Returns:
        np.ndarray: G (n × r)
    """
    V = np.asarray(V, dtype=float)
    G = np.zeros((V.shape[0], F.shape[0]))
    if not V.shape[0]:
        return G
    unique, inverse = np.unique(V, axis=0, return_inverse=True)
    basis_t = F.T
    solved = np.zeros((unique.shape[0], F.shape[0]))
    for i, row in enumerate(unique):
        if np.any(row > 0):
            solved[i], _ = scipy_nnls(basis_t, row)
    return solved[np.asarray(inverse).reshape(-1)]


def _plus_plus(points: np.ndarray, k: int, rng: np.random.Generator) -> Optional[np.ndarray]:
    """k-means++ 選點；可選的相異點不足 k 個時回傳 None"""
    chosen = [int(rng.integers(points.shape[0]))]
    closest = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if not total > 0:
            return None
        index = int(rng.choice(points.shape[0], p=closest / total))
        chosen.append(index)
        closest = np.minimum(closest, ((points - points[index]) ** 2).sum(axis=1))
    return points[chosen]


def _cluster_init(V: np.ndarray, r: int, rng: np.random.Generator) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    norms = np.linalg.norm(V, axis=1)
    active = norms > 0
    if np.count_nonzero(active) < r:
        return None
    directions = V[active] / norms[active, None]
    seeds = _plus_plus(directions, r, rng)
    if seeds is None:
        return None
    with warnings.catch_warnings():
        warnings.simplefilter('ignore')
        centres, _ = kmeans2(directions, seeds, iter=10, minit='matrix', missing='warn')

    F = np.maximum(centres, 0.0)
    G = solve_rows(V, F)
    # 乘法更新無法離開 0，補上很小的正值
    G = np.maximum(G, 1e-6 * max(float(G.max()), EPS))
    F = np.maximum(F, 1e-6 * max(float(F.max()), EPS))
    return G, F


def quantize(values: np.ndarray, bits: int) -> np.ndarray:
    """
    Lloyd 純量量化：以一維 k-means 將數值量化為 2^bits 個等級

    Args:
        values: 任意形狀的數值
        bits: 每個數值的位元數

    Returns:
        np.ndarray: 量化後的數值（形狀不變）
    """
    values = np.asarray(values, dtype=float)
    flat = values.ravel()
    levels = 2 ** bits
    if np.unique(flat).size <= levels:
        return values.copy()

    # 以分位數初始化，結果可重現
    init = np.unique(np.quantile(flat, (np.arange(levels) + 0.5) / levels))
    with warnings.catch_warnings():
        warnings.simplefilter('ignore')
        codebook, labels = kmeans2(flat, init, iter=20, minit='matrix', missing='warn')
    return codebook[labels].reshape(values.shape)


def description_length(V: np.ndarray, G: np.ndarray, F: np.ndarray, bits: int = DEFAULT_BITS,
                       error_model: str = 'squared',
                       precision_bits: Optional[int] = None) -> float:
    """
    計算描述長度 L = b·(n·r + r·f) + 誤差位元數

    G 的位元數取 b·n·r 與 b·K·r + n·⌈log₂K⌉ 的較小者，後者只編碼量化後 G 的 K 個相異列，
    再為每列記一個索引。

    誤差以固定精度 δ = 2^-precision_bits 編碼量化後重建的殘差：
    squared 模型每個元素 ½·log₂(1 + e²/δ²)，kl 模型每個元素 log₂(1 + d_KL/δ)。

    Args:
        V: 原始矩陣（已縮放到每欄最大值為 1）
        G: 成員矩陣
        F: 基底矩陣
        bits: 每個模型參數的位元數
        error_model: squared 或 kl
        precision_bits: 殘差編碼精度，預設為 bits + 2

    Returns:
        float: 描述長度（位元）
    """
    n, f = V.shape
    r = G.shape[1]
    precision_bits = bits + 2 if precision_bits is None else precision_bits
    delta = 2.0 ** -precision_bits

    G_hat = quantize(G, bits)
    reconstruction = G_hat @ quantize(F, bits)
    membership_bits = bits * n * r
    if n > 1:
        distinct = np.unique(G_hat, axis=0).shape[0]
        index_bits = n * int(np.ceil(np.log2(distinct))) if distinct > 1 else 0
        membership_bits = min(membership_bits, bits * distinct * r + index_bits)
    model_bits = membership_bits + bits * r * f

    if error_model == 'squared':
        residual = (V - reconstruction) / delta
        error_bits = 0.5 * np.log2(1.0 + residual ** 2).sum()
    elif error_model == 'kl':
        R = np.maximum(reconstruction, EPS)
        with np.errstate(divide='ignore', invalid='ignore'):
            term = np.where(V > 0, V * np.log(np.where(V > 0, V, 1.0) / R), 0.0)
        divergence = np.maximum(term - V + R, 0.0)
        error_bits = np.log2(1.0 + divergence / delta).sum()
    else:
        raise InvalidArgumentError(f"不支援的誤差模型: {error_model}")

    return float(model_bits + error_bits)


def column_scale(V: np.ndarray) -> np.ndarray:
    """每欄最大值（全零欄為 1），用於把特徵縮放到單位最大值"""
    scale = V.max(axis=0) if V.shape[0] else np.ones(V.shape[1])
    return np.where(scale > 0, scale, 1.0)


@dataclass
class RoleModel:
    """角色模型：角色×特徵基底 F 與 MDL 選擇紀錄"""

    basis: np.ndarray
    feature_defs: List[FeatureDefinition]
    mdl_trace: List[Tuple[int, float]] = field(default_factory=list)
    column_scale: Optional[np.ndarray] = None

    def __post_init__(self):
        self.basis = np.asarray(self.basis, dtype=float)
        if self.basis.ndim != 2 or self.basis.shape[1] != len(self.feature_defs):
            raise InvalidArgumentError(
                f"基底形狀 {self.basis.shape} 與特徵數 {len(self.feature_defs)} 不符")
        if not np.all(np.isfinite(self.basis)) or (self.basis.size and self.basis.min() < 0):
            raise InvalidArgumentError("基底必須為非負有限值")
        if self.column_scale is None:
            self.column_scale = np.ones(self.basis.shape[1])
        self.column_scale = np.asarray(self.column_scale, dtype=float)
        self.mdl_trace = [(int(r), float(bits)) for r, bits in self.mdl_trace]

    @property
    def rank(self) -> int:
        return int(self.basis.shape[0])

    @property
    def scaled_basis(self) -> np.ndarray:
        return self.basis / self.column_scale

    def to_dict(self) -> dict:
        return {
            'rank': self.rank,
            'basis': self.basis.tolist(),
            'feature_defs': definitions_to_json(self.feature_defs),
            'mdl_trace': [[r, bits] for r, bits in self.mdl_trace],
            'column_scale': self.column_scale.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'RoleModel':
        defs = definitions_from_json(data['feature_defs'])
        basis = np.asarray(data['basis'], dtype=float).reshape(int(data['rank']), len(defs))
        return cls(basis, defs, [tuple(item) for item in data.get('mdl_trace', [])],
                   np.asarray(data.get('column_scale', np.ones(len(defs))), dtype=float))

    def save(self, path: str) -> None:
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write('\n')

    @classmethod
    def load(cls, path: str) -> 'RoleModel':
        with open(path, encoding='utf-8') as f:
            return cls.from_dict(json.load(f))


class MembershipMatrix:
    """節點×角色成員矩陣 G_t"""

    def __init__(self, timestep: int, nodes: np.ndarray, values: np.ndarray, normalized: bool = False):
        self.timestep = int(timestep)
        self.nodes = np.asarray(nodes, dtype=np.int64)
        values = np.asarray(values, dtype=float)
        if values.ndim != 2:
            values = values.reshape(len(self.nodes), -1)
        if values.shape[0] != len(self.nodes):
            raise InvalidArgumentError(f"成員矩陣列數 {values.shape[0]} 與節點數 {len(self.nodes)} 不符")
        self.values = values
        self.normalized = normalized
        if self.values.size and self.values.min() < 0:
            raise InvalidArgumentError("成員值不可為負")

    @property
    def n_rows(self) -> int:
        return int(self.values.shape[0])

    @property
    def rank(self) -> int:
        return int(self.values.shape[1])

    def normalize(self) -> 'MembershipMatrix':
        if self.normalized:
            return self
        return MembershipMatrix(self.timestep, self.nodes, normalize_rows(self.values), normalized=True)

    def row_for(self, node: int) -> Optional[np.ndarray]:
        pos = int(np.searchsorted(self.nodes, node))
        if pos < self.n_rows and self.nodes[pos] == node:
            return self.values[pos]
        # 節點不一定已排序
        matches = np.flatnonzero(self.nodes == node)
        return self.values[matches[0]] if matches.size else None

    def __repr__(self) -> str:
        return f"MembershipMatrix(t={self.timestep}, shape={self.values.shape}, normalized={self.normalized})"


def normalize_rows(values: np.ndarray) -> np.ndarray:
    """
    將每列縮放為總和 1；全零列維持全零

    Args:
        values: 非負矩陣

    Returns:
        np.ndarray: 列正規化後的矩陣
    """
    values = np.asarray(values, dtype=float)
    totals = values.sum(axis=1, keepdims=True)
    return np.divide(values, totals, out=np.zeros_like(values), where=totals > 0)


def memberships_to_frame(memberships: Sequence[MembershipMatrix],
                         node_labels: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """把多個時間步的成員矩陣整理成一張表（node, node_id, t, role_1..role_r）"""
    frames = []
    rank = max((m.rank for m in memberships), default=0)
    columns = [f'role_{k + 1}' for k in range(rank)]
    for m in memberships:
        frame = pd.DataFrame(m.values, columns=columns[:m.rank])
        frame.insert(0, 't', m.timestep)
        frame.insert(0, 'node_id', m.nodes)
        labels = [node_labels[i] for i in m.nodes] if node_labels is not None else m.nodes
        frame.insert(0, 'node', labels)
        frames.append(frame)
    if not frames:
        return pd.DataFrame(columns=['node', 'node_id', 't'] + columns)
    return pd.concat(frames, ignore_index=True)


def memberships_from_frame(frame: pd.DataFrame, timesteps: Sequence[int],
                           normalized: bool = False) -> List[MembershipMatrix]:
    role_columns = [c for c in frame.columns if str(c).startswith('role_')]
    result = []
    for t in timesteps:
        part = frame[frame['t'] == t]
        result.append(MembershipMatrix(t, part['node_id'].to_numpy(dtype=np.int64),
                                       part[role_columns].to_numpy(dtype=float).reshape(len(part), len(role_columns)),
                                       normalized=normalized))
    return result


def _reconcile(V: FeatureMatrix, model: RoleModel) -> np.ndarray:
    index = {d: j for j, d in enumerate(V.definitions)}
    extra = [d for d in V.definitions if d not in set(model.feature_defs)]
    if extra:
        extra_cols = [index[d] for d in extra]
        if V.values.size and np.any(V.values[:, extra_cols] != 0):
            names = ', '.join(d.key for d in extra[:5])
            raise SchemaMismatchError(f"特徵矩陣含有模型沒有的非零欄位: {names}", timestep=V.timestep)

    aligned = np.zeros((V.values.shape[0], len(model.feature_defs)))
    for k, d in enumerate(model.feature_defs):
        j = index.get(d)
        if j is not None:
            aligned[:, k] = V.values[:, j]
    return aligned


def estimate_memberships(V: FeatureMatrix, model: RoleModel) -> MembershipMatrix:
    """
    固定基底 F，以非負最小平方法逐列求解 min_{G≥0} ‖V − G·F‖²

    Args:
        V: 特徵矩陣；模型中有但此時間步沒有的欄位補零
        model: 角色模型

    Returns:
        MembershipMatrix: 未正規化的成員矩陣
    """
    aligned = _reconcile(V, model) / model.column_scale
    G = solve_rows(aligned, model.scaled_basis)
    if not np.all(np.isfinite(G)):
        raise NumericalError(f"時間步 {V.timestep} 的成員估計出現非有限值")
    return MembershipMatrix(V.timestep, V.nodes, G, normalized=False)


class RoleFactorizer:
    """NMF + MDL 的角色學習器"""

    def __init__(self, max_iters: int = DEFAULT_MAX_ITERS, tol: float = DEFAULT_TOL,
                 n_restarts: int = DEFAULT_RESTARTS, seed: int = 0, bits: int = DEFAULT_BITS,
                 error_model: str = 'squared', error_precision_bits: Optional[int] = None,
                 workers: int = 1):
        if n_restarts < 1:
            raise InvalidArgumentError(f"n_restarts 至少為 1: {n_restarts}")
        if error_model not in ('squared', 'kl'):
            raise InvalidArgumentError(f"不支援的誤差模型: {error_model}")
        self.max_iters = max_iters
        self.tol = tol
        self.n_restarts = n_restarts
        self.seed = seed
        self.bits = bits
        self.error_model = error_model
        self.error_precision_bits = error_precision_bits
        self.workers = max(1, int(workers))

    def factorize(self, V: np.ndarray, r: int) -> NmfResult:
        """多次重啟取目標函數最小者；第一次從 k-means++ 中心開始，其餘為隨機初始化"""
        best = None
        for restart in range(self.n_restarts):
            result = nmf(V, r, self.max_iters, self.tol, seed=self.seed + 1000 * r + restart,
                         init='kmeans' if restart == 0 else 'random')
            if best is None or result.objective < best.objective:
                best = result
        return best

    def _score(self, scaled: np.ndarray, r: int) -> Tuple[int, float, NmfResult]:
        result = self.factorize(scaled, r)
        # 相同的列取得相同的成員
        G = solve_rows(scaled, result.F)
        bits = description_length(scaled, G, result.F, self.bits,
                                  self.error_model, self.error_precision_bits)
        logger.debug("r=%d: 描述長度 %.1f 位元（目標函數 %.4g）", r, bits, result.objective)
        return r, bits, result

    def select_rank(self, V: np.ndarray, r_min: int, r_max: int,
                    feature_defs: Optional[Sequence[FeatureDefinition]] = None) -> RoleModel:
        """
        掃描 r ∈ [r_min, r_max]，回傳描述長度最小的模型（同分取較小的 r）

        Args:
            V: 非負矩陣 (n × f)
            r_min: 最小角色數
            r_max: 最大角色數
            feature_defs: 欄位對應的特徵定義

        Returns:
            RoleModel: 選出的模型，基底已還原成原始尺度
        """
        V = _check_nonnegative(V)
        n, f = V.shape
        if not (1 <= r_min <= r_max < min(n, f)):
            raise InvalidArgumentError(
                f"角色數範圍 [{r_min}, {r_max}] 必須滿足 1 ≤ r_min ≤ r_max < min(n, f) = {min(n, f)}")
        if feature_defs is None:
            feature_defs = [FeatureDefinition('total_degree', ('sum',) * j) for j in range(f)]
        if len(feature_defs) != f:
            raise InvalidArgumentError(f"特徵定義數 {len(feature_defs)} 與欄位數 {f} 不符")

        scale = column_scale(V)
        scaled = V / scale

        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            scores = list(pool.map(lambda r: self._score(scaled, r), range(r_min, r_max + 1)))

        best_r, best_bits, best_result = scores[0]
        for r, bits, result in scores[1:]:
            if bits < best_bits:
                best_r, best_bits, best_result = r, bits, result

        trace = [(r, bits) for r, bits, _ in scores]
        logger.info("MDL 選出 %d 個角色（描述長度 %.1f 位元）", best_r, best_bits)
        return RoleModel(best_result.F * scale, list(feature_defs), trace, scale)


def mdl_select_rank(V: np.ndarray, r_min: int, r_max: int, bits: int = DEFAULT_BITS,
                    feature_defs: Optional[Sequence[FeatureDefinition]] = None,
                    **factorizer_options) -> RoleModel:
    """
    以 MDL 選擇角色數

    Args:
        V: 非負矩陣
        r_min: 最小角色數
        r_max: 最大角色數
        bits: 每個模型參數的位元數
        feature_defs: 欄位的特徵定義
        **factorizer_options: 傳給 RoleFactorizer 的其他參數

    Returns:
        RoleModel: 選出的模型與完整 MDL 紀錄
    """
    return RoleFactorizer(bits=bits, **factorizer_options).select_rank(V, r_min, r_max, feature_defs)
