"""
錯誤類型模組
定義角色動態分析流程使用的例外與對應的命令列結束碼
"""

from typing import Optional


EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class RoleDynamicsError(Exception):
    """所有流程錯誤的基底類別"""

    exit_code = EXIT_DATA


class InvalidArgumentError(RoleDynamicsError, ValueError):
    """參數或前置條件錯誤"""

    exit_code = EXIT_USAGE


class DataError(RoleDynamicsError):
    """輸入資料錯誤"""

    exit_code = EXIT_DATA


class EdgeParseError(DataError):
    """邊列表解析錯誤"""

    def __init__(self, message: str, line_number: Optional[int] = None):
        super().__init__(message)
        self.line_number = line_number


class SchemaMismatchError(DataError):
    """特徵欄位無法對齊"""

    def __init__(self, message: str, timestep: Optional[int] = None):
        if timestep is not None:
            message = f"時間步 {timestep}: {message}"
        super().__init__(message)
        self.timestep = timestep


class FeatureDefinitionError(DataError):
    """未知的特徵定義"""


class InsufficientDataError(DataError):
    """資料量不足以完成計算"""


class UnknownNodeError(DataError, KeyError):
    """節點不存在於節點字典中"""

    def __str__(self) -> str:
        # KeyError 預設會加引號
        return str(self.args[0]) if self.args else ""


class NumericalError(RoleDynamicsError):
    """數值計算失敗（出現非有限值）"""

    exit_code = EXIT_NUMERICAL


def exit_code_for(error: BaseException) -> int:
    """
    取得例外對應的結束碼

    Args:
        error: 例外物件

    Returns:
        int: 結束碼
    """
    if isinstance(error, RoleDynamicsError):
        return error.exit_code
    if isinstance(error, OSError):
        return EXIT_DATA
    if isinstance(error, (FloatingPointError, ArithmeticError)):
        return EXIT_NUMERICAL
    return EXIT_DATA
