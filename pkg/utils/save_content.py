import os
import json
import hashlib
from datetime import datetime
from typing import Union, Dict, Any, List, Sequence

import numpy as np


def format_float(value: Any) -> str:
    """
    CSV 中的浮点格式; repr 级精度保证同一配置的输出逐字节一致
    """
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    return str(value)


def _to_jsonable(content: Any) -> Any:
    if isinstance(content, dict):
        return {str(k): _to_jsonable(v) for k, v in content.items()}
    if isinstance(content, (list, tuple)):
        return [_to_jsonable(v) for v in content]
    if isinstance(content, np.ndarray):
        return _to_jsonable(content.tolist())
    if isinstance(content, np.generic):
        return content.item()
    if hasattr(content, "to_dict"):
        return _to_jsonable(content.to_dict())
    return content


def config_hash(config: Dict[str, Any]) -> str:
    """配置的 sha256 (规范化 JSON)"""
    canonical = json.dumps(_to_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def save_content(file_path: str, content_type: str, content: Union[str, Dict[str, Any], List[Any]]):
    """
    保存实验产物

    Args:
        file_path (str): 保存文件的路径
        content_type (str): 内容类型 ('csv', 'json', 'manifest', 'gnuplot', 'trace', 'text')
        content: csv/trace 为 {'header': [...], 'rows': [[...], ...]}; json/manifest 为字典;
                 gnuplot/text 为字符串
    """
    # 确保目录存在
    if os.path.dirname(file_path):
        os.makedirs(os.path.dirname(file_path), exist_ok=True)

    if content_type in ("csv", "trace"):
        header: Sequence[str] = content["header"]
        rows: Sequence[Sequence[Any]] = content["rows"]
        lines = [",".join(header)]
        for row in rows:
            lines.append(",".join(format_float(v) for v in row))
        text = "\n".join(lines) + "\n"

    elif content_type == "json":
        text = json.dumps(_to_jsonable(content), ensure_ascii=False, indent=2, sort_keys=True) + "\n"

    elif content_type == "manifest":
        # wall time 只出现在 manifest 里, CSV 保持可复现
        manifest = dict(_to_jsonable(content))
        manifest.setdefault("written_at", datetime.now().strftime("%Y-%m-%d %H:%M:%S"))
        text = json.dumps(manifest, ensure_ascii=False, indent=2, sort_keys=True) + "\n"

    elif content_type in ("gnuplot", "text"):
        text = str(content)
        if not text.endswith("\n"):
            text += "\n"

    else:
        raise ValueError(f"unknown content type '{content_type}'")

    # newline="" 防止 Windows 上改写换行符
    with open(file_path, "w", encoding="utf-8", newline="") as f:
        f.write(text)


def gnuplot_script(csv_name: str, x_column: str, y_columns: Sequence[str], header: Sequence[str],
                   title: str) -> str:
    """
    生成 log-log 收敛图的 gnuplot 脚本
    """
    index = {name: i + 1 for i, name in enumerate(header)}
    plots = []
    for column in y_columns:
        plots.append(f"'{csv_name}' using {index[x_column]}:{index[column]} with linespoints title '{column}'")
    return "\n".join([
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set logscale xy",
        f"set xlabel '{x_column}'",
        f"set title '{title}'",
        "plot " + ", \\\n     ".join(plots),
    ])
