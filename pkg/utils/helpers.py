"""
輔助函數模組
提供檔案、路徑、校驗碼與表格輸出等實用功能
"""

import hashlib
import json
import os
from typing import Any, Tuple

import pandas as pd


EDGE_FILE_EXTENSIONS = ('.csv', '.tsv', '.txt', '.edges', '.el')


def validate_edge_file(file_path: str) -> bool:
    """
    驗證是否為可讀取的邊列表檔案

    Args:
        file_path: 檔案路徑

    Returns:
        bool: 是否為有效的邊列表檔案
    """
    if not os.path.isfile(file_path):
        return False

    return file_path.lower().endswith(EDGE_FILE_EXTENSIONS)


def ensure_directory_exists(directory_path: str) -> bool:
    """
    確保目錄存在，如果不存在則創建

    Args:
        directory_path: 目錄路徑

    Returns:
        bool: 操作是否成功
    """
    try:
        os.makedirs(directory_path, exist_ok=True)
        return True
    except OSError:
        return False


def file_sha256(file_path: str, chunk_size: int = 1 << 16) -> str:
    """
    計算檔案的 SHA-256

    Args:
        file_path: 檔案路徑
        chunk_size: 每次讀取的位元組數

    Returns:
        str: 十六進位校驗碼
    """
    digest = hashlib.sha256()
    with open(file_path, 'rb') as f:
        for chunk in iter(lambda: f.read(chunk_size), b''):
            digest.update(chunk)
    return digest.hexdigest()


def format_file_size(size_bytes: int) -> str:
    """
    格式化檔案大小顯示

    Args:
        size_bytes: 檔案大小（位元組）

    Returns:
        str: 格式化的檔案大小
    """
    if size_bytes < 1024:
        return f"{size_bytes} B"
    elif size_bytes < 1024 * 1024:
        return f"{size_bytes / 1024:.1f} KB"
    elif size_bytes < 1024 * 1024 * 1024:
        return f"{size_bytes / (1024 * 1024):.1f} MB"
    else:
        return f"{size_bytes / (1024 * 1024 * 1024):.1f} GB"


def write_json(path: str, data: Any) -> str:
    """以固定格式寫出 JSON（排序鍵、縮排 2、LF 換行）"""
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(data, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write('\n')
    return path


def read_json(path: str) -> Any:
    with open(path, encoding='utf-8') as f:
        return json.load(f)


def write_csv(path: str, frame: pd.DataFrame) -> str:
    """寫出 RFC 4180 CSV（無索引、LF 換行）"""
    frame.to_csv(path, index=False, lineterminator='\n')
    return path


def validate_output_path(output_path: str) -> Tuple[bool, str]:
    """
    驗證輸出目錄是否可寫入

    Args:
        output_path: 輸出路徑

    Returns:
        Tuple[bool, str]: (是否有效, 錯誤訊息)
    """
    try:
        if os.path.exists(output_path) and not os.path.isdir(output_path):
            return False, f"輸出路徑不是目錄: {output_path}"

        parent = output_path if os.path.isdir(output_path) else os.path.dirname(os.path.abspath(output_path))
        if parent and os.path.exists(parent) and not os.access(parent, os.W_OK):
            return False, f"沒有寫入權限: {parent}"

        return True, ""

    except OSError as e:
        return False, f"路徑驗證錯誤: {e}"
