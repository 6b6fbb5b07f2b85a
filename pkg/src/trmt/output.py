"""输出模块

CSV / JSON / NDJSON 写出。浮点数统一使用 %.17g，JSON 键排序，
保证相同配置与种子下输出逐字节一致。
"""

import csv
import io
import json
import sys
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np


def _plain(value: Any) -> Any:
    """把numpy标量/数组转换成JSON可写的原生类型"""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, complex):
        return {"re": value.real, "im": value.imag}
    return value


def format_cell(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    return str(value)


def to_json(payload: Any) -> str:
    return json.dumps(_plain(payload), sort_keys=True, indent=2, ensure_ascii=False)


def to_csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_cell(cell) for cell in row])
    return buffer.getvalue()


def to_ndjson(records: Iterable[Dict[str, Any]]) -> str:
    return "".join(json.dumps(_plain(r), sort_keys=True) + "\n" for r in records)


def emit(text: str, out: Optional[str] = None) -> None:
    """写到文件或标准输出

    Args:
        text: 完整文本
        out: 输出路径，None 表示标准输出
    """
    if out is None:
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def read_ndjson(path: str) -> List[Dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]
