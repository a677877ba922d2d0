import json
import logging
import os
import sys
from importlib import metadata
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:  # Python 3.10: API-identical backport
    import tomli as tomllib

import numpy as np
from rich.console import Console
from rich.logging import RichHandler

LAB_NAME = "feeclab"
LAB_VERSION = "0.1.0"

_config_path = ""
_output_dir = ""
_logging_ready = False

# 日志统一输出到 stderr, 保证 stdout 上的表格和 CSV 不被打断
_log_console = Console(stderr=True)


def set_config_path(path: str):
    """
    设置配置文件路径
    Args:
        path: TOML 或 JSON 配置文件路径
    """
    global _config_path
    _config_path = path


def get_config_path() -> str:
    return _config_path


def get_study_config() -> dict:
    """
    读取完整配置 (TOML 或 JSON)
    Returns:
        config: 配置字典; 未设置路径时为空字典
    """
    if not _config_path:
        return {}
    return read_config_file(_config_path)


def read_config_file(path: str) -> dict:
    """
    按后缀读取配置文件
    Args:
        path: .toml 或 .json 文件
    Returns:
        config: 原始字典 (未校验)
    """
    file_path = Path(path)
    if file_path.suffix.lower() == ".json":
        with open(file_path, "r", encoding="utf-8") as f:
            return json.load(f)
    with open(file_path, "rb") as f:
        return tomllib.load(f)


def set_output_dir(path: Optional[str]):
    """
    设置输出目录; 为空时使用 ./.feeclab/runs
    Args:
        path: 输出目录
    """
    global _output_dir
    if path:
        _output_dir = str(Path(path))
    else:
        _output_dir = str(Path(".") / f".{LAB_NAME}" / "runs")
    os.makedirs(_output_dir, exist_ok=True)


def get_output_dir() -> str:
    if not _output_dir:
        set_output_dir(None)
    return _output_dir


def get_logger(name: str) -> logging.Logger:
    """
    获取带 RichHandler 的 logger
    级别由环境变量 FEECLAB_LOG_LEVEL 控制, 默认 WARNING
    """
    global _logging_ready
    if not _logging_ready:
        root = logging.getLogger(LAB_NAME)
        root.setLevel(os.environ.get("FEECLAB_LOG_LEVEL", "WARNING").upper())
        root.addHandler(RichHandler(console=_log_console, show_path=False, markup=False))
        root.propagate = False
        _logging_ready = True
    return logging.getLogger(f"{LAB_NAME}.{name}")


def set_log_level(level: str):
    get_logger("utils")
    logging.getLogger(LAB_NAME).setLevel(level.upper())


def make_rng(seed: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed)


def package_versions() -> dict:
    """
    记录运行时依赖版本, 写入 run manifest
    """
    versions = {LAB_NAME: LAB_VERSION}
    for dist in ("numpy", "scipy", "rich", "pydantic"):
        try:
            versions[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            versions[dist] = "unknown"
    return versions


def w_norm(gram: Any, v: np.ndarray) -> float:
    """‖v‖ = sqrt(vᵀ M v), 对稀疏和稠密 Gram 都适用"""
    value = float(v @ (gram @ v))
    return float(np.sqrt(max(value, 0.0)))
