"""
設定模組
RunConfig 對應命令列參數，一個欄位一個旗標
"""

import json
import os
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, Mapping, Optional

from .errors import InvalidArgumentError


AGGREGATIONS = ('sum', 'max', 'count')
MODES = ('global-basis', 'per-timestep-refit')
CHANGE_METRICS = ('euclidean', 'cosine', 'hellinger')
ERROR_MODELS = ('squared', 'kl')

ENV_SEED = 'ROLE_DYNAMICS_SEED'
ENV_WORKERS = 'ROLE_DYNAMICS_WORKERS'


@dataclass
class RunConfig:
    """一次完整分析的設定"""

    input_path: str = ''
    schema: str = 'src,dst,time'
    delimiter: Optional[str] = None
    strict: bool = False
    keep_self_loops: bool = False

    window_width: float = 1.0
    origin: Optional[float] = None
    aggregation: str = 'sum'

    bin_fraction: float = 0.5
    n_bins: Optional[int] = None
    max_depth: int = 6

    max_iters: int = 200
    tol: float = 1e-4
    restarts: int = 3
    seed: int = 0

    r_min: int = 1
    r_max: int = 8
    bits: int = 4
    error_model: str = 'squared'

    mode: str = 'global-basis'
    change_metric: str = 'hellinger'
    normalize_measures: bool = True
    betweenness_node_cap: int = 50000

    workers: int = 1
    output_dir: str = 'output'

    def validate(self) -> 'RunConfig':
        """
        檢查所有數值參數是否在允許範圍內

        Returns:
            RunConfig: 自身，方便串接

        Raises:
            InvalidArgumentError: 參數超出範圍
        """
        problems = []
        if not self.window_width > 0:
            problems.append(f"window_width 必須大於 0: {self.window_width}")
        if self.aggregation not in AGGREGATIONS:
            problems.append(f"不支援的 aggregation: {self.aggregation}")
        if not 0.0 < self.bin_fraction < 1.0:
            problems.append(f"bin_fraction 必須在 (0, 1) 之間: {self.bin_fraction}")
        if self.n_bins is not None and self.n_bins < 2:
            problems.append(f"n_bins 至少為 2: {self.n_bins}")
        if self.max_depth < 0:
            problems.append(f"max_depth 不可為負: {self.max_depth}")
        if self.max_iters < 1:
            problems.append(f"max_iters 至少為 1: {self.max_iters}")
        if not self.tol > 0:
            problems.append(f"tol 必須大於 0: {self.tol}")
        if self.restarts < 1:
            problems.append(f"restarts 至少為 1: {self.restarts}")
        if self.r_min < 1 or self.r_max < self.r_min:
            problems.append(f"角色數範圍無效: [{self.r_min}, {self.r_max}]")
        if not 1 <= self.bits <= 16:
            problems.append(f"bits 必須在 1-16 之間: {self.bits}")
        if self.error_model not in ERROR_MODELS:
            problems.append(f"不支援的 error_model: {self.error_model}")
        if self.mode not in MODES:
            problems.append(f"不支援的 mode: {self.mode}")
        if self.change_metric not in CHANGE_METRICS:
            problems.append(f"不支援的 change_metric: {self.change_metric}")
        if self.betweenness_node_cap < 0:
            problems.append(f"betweenness_node_cap 不可為負: {self.betweenness_node_cap}")
        if self.workers < 1:
            problems.append(f"workers 至少為 1: {self.workers}")

        if problems:
            raise InvalidArgumentError('; '.join(problems))
        return self

    def apply_env(self, environ: Optional[Mapping[str, str]] = None) -> 'RunConfig':
        """
        套用環境變數覆寫（種子與工作執行緒數）

        Args:
            environ: 環境變數字典，預設為 os.environ

        Returns:
            RunConfig: 自身
        """
        environ = os.environ if environ is None else environ
        try:
            if environ.get(ENV_SEED):
                self.seed = int(environ[ENV_SEED])
            if environ.get(ENV_WORKERS):
                self.workers = int(environ[ENV_WORKERS])
        except ValueError as e:
            raise InvalidArgumentError(f"環境變數格式錯誤: {e}") from e
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'RunConfig':
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidArgumentError(f"未知的設定欄位: {', '.join(unknown)}")
        return cls(**dict(data))

    @classmethod
    def from_json(cls, text: str) -> 'RunConfig':
        return cls.from_dict(json.loads(text))
