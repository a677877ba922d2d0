"""
统一命令执行器
处理所有子命令: validate, hodge, solve, study, crime, coeffs
"""

import functools
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import numpy as np

from hilbert.complex import load_complex, validate_complex
from hilbert.hodge import hodge_decompose
from lab.config import StudyConfig, load_study_config
from lab.study import RUNNERS, RateReport
from utils.errors import ConfigError, LabError
from utils.save_content import save_content
from utils.utils import get_logger, get_output_dir

logger = get_logger(__name__)


class CommandType(Enum):
    """命令类型"""
    VALIDATE = "validate"   # 复形校验
    HODGE = "hodge"         # Hodge 分解
    SOLVE = "solve"         # 单层求解
    STUDY = "study"         # 人造解加密实验
    CRIME = "crime"         # 变分犯罪 ε 扫描
    COEFFS = "coeffs"       # 逼近系数


class ResultStyle(Enum):
    """结果样式"""
    SUCCESS = "success"     # 绿色
    ERROR = "error"         # 红色
    WARNING = "warning"     # 黄色
    INFO = "info"           # 青色


# 子命令接受的配置类型
ACCEPTED_KINDS = {
    CommandType.SOLVE: ("solve", "convergence"),
    CommandType.STUDY: ("convergence",),
    CommandType.CRIME: ("crime",),
    CommandType.COEFFS: ("coefficients",),
}


@dataclass
class CommandResult:
    """命令执行结果"""
    cmd_type: CommandType
    success: bool
    title: str
    output: str
    style: ResultStyle
    exit_code: int = 0
    payload: Dict[str, Any] = field(default_factory=dict)
    report: Optional[RateReport] = None


def guard_command(cmd_type: CommandType):
    """
    把命令中的异常转成失败的 CommandResult

    配置与文件错误属于用法错误 (退出码 2), 数值失败退出码 1
    """
    def decorator(func: Callable[..., CommandResult]):
        @functools.wraps(func)
        def wrapper(*args, **kwargs) -> CommandResult:
            try:
                return func(*args, **kwargs)
            except ConfigError as e:
                return CommandResult(cmd_type, False, "❌ Invalid configuration", str(e), ResultStyle.ERROR, 2)
            except (FileNotFoundError, json.JSONDecodeError, KeyError) as e:
                return CommandResult(cmd_type, False, "❌ Cannot read input", f"{type(e).__name__}: {e}",
                                     ResultStyle.ERROR, 2)
            except LabError as e:
                logger.debug("[%s] failed", cmd_type.value, exc_info=True)
                return CommandResult(cmd_type, False, f"❌ {cmd_type.value} failed",
                                     f"{type(e).__name__}: {e}", ResultStyle.ERROR, 1)
        return wrapper
    return decorator


# ==================== 复形命令 ====================

@guard_command(CommandType.VALIDATE)
def run_validate(complex_path: str) -> CommandResult:
    """
    校验复形文件, JSON 报告写到输出目录

    Args:
        complex_path: 复形 JSON
    """
    report = validate_complex(load_complex(complex_path))
    target = Path(get_output_dir()) / f"{Path(complex_path).stem}.validation.json"
    save_content(str(target), "json", report.to_dict())
    return CommandResult(
        cmd_type=CommandType.VALIDATE,
        success=report.passed,
        title=f"{'✅' if report.passed else '❌'} Validate: {Path(complex_path).name}",
        output=report.to_text(),
        style=ResultStyle.SUCCESS if report.passed else ResultStyle.ERROR,
        exit_code=0 if report.passed else 1,
        payload=report.to_dict(),
    )


def _read_vector(path: str) -> np.ndarray:
    """向量文件: JSON 数组或 {"vector": [...]}"""
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    if isinstance(data, dict):
        data = data["vector"]
    return np.asarray(data, dtype=float)


@guard_command(CommandType.HODGE)
def run_hodge(complex_path: str, degree: int, vector_path: str) -> CommandResult:
    c = load_complex(complex_path)
    decomposition = hodge_decompose(c, degree, _read_vector(vector_path))
    payload = decomposition.to_dict()
    target = Path(get_output_dir()) / f"{Path(complex_path).stem}.hodge{degree}.json"
    save_content(str(target), "json", payload)
    dims = decomposition.dims
    lines = [f"degree {degree}: dim B = {dims['B']}, dim H = {dims['H']}, dim Z⊥ = {dims['perp']}"]
    for name in ("coboundary_part", "harmonic_part", "perp_part"):
        lines.append(f"  {name:16s} {np.array2string(np.asarray(payload[name]), precision=6)}")
    lines.append(f"written to {target}")
    return CommandResult(CommandType.HODGE, True, f"🔺 Hodge decomposition: {Path(complex_path).name}",
                         "\n".join(lines), ResultStyle.INFO, 0, payload)


# ==================== 实验命令 ====================

def prepare_config(cmd_type: CommandType, config_path: str, output_dir: Optional[str] = None,
                   seed: Optional[int] = None, tol: Optional[float] = None) -> StudyConfig:
    config = load_study_config(config_path).with_overrides(output_dir, seed, tol)
    accepted = ACCEPTED_KINDS[cmd_type]
    if config.kind not in accepted:
        raise ConfigError([f"study.kind: '{config.kind}' cannot run under '{cmd_type.value}' "
                           f"(expected {' or '.join(accepted)})"])
    return config


def _summary(report: RateReport) -> str:
    lines = []
    for name, fit in report.rates.items():
        if fit is None:
            lines.append(f"{name:8s} slope n/a (zero or missing values)")
        else:
            lines.append(f"{name:8s} slope {fit.slope:+.4f} ± {fit.stderr:.2e} over {fit.points} points")
    for name, flag in report.monotone.items():
        if not flag.nonincreasing:
            note = "tolerated" if flag.tolerated else "NOT tolerated"
            lines.append(f"{name:8s} increases at levels {flag.inversions} ({note})")
    for check in report.checks:
        mark = "✅" if check.passed else "❌"
        measured = "n/a" if check.measured is None else f"{check.measured:.4f}"
        lines.append(f"{mark} {check.name}: {measured} (expected {check.expected} ± {check.tolerance})")
    if report.output_dir:
        lines.append(f"artifacts in {report.output_dir}")
    return "\n".join(lines) if lines else "done"


def run_experiment(cmd_type: CommandType, config_path: str, output_dir: Optional[str] = None,
                   seed: Optional[int] = None, tol: Optional[float] = None,
                   on_event: Optional[Callable[[dict], None]] = None) -> CommandResult:
    """
    载入配置, 运行对应实验; 断言失败时 success=False, 退出码 1
    """
    @guard_command(cmd_type)
    def _run() -> CommandResult:
        config = prepare_config(cmd_type, config_path, output_dir, seed, tol)
        runner = RUNNERS["solve"] if cmd_type == CommandType.SOLVE else RUNNERS[config.kind]
        report = runner(config, on_event)
        ok = report.passed
        return CommandResult(
            cmd_type=cmd_type,
            success=ok,
            title=f"{'✅' if ok else '❌'} {cmd_type.value}: {config.name}",
            output=_summary(report),
            style=ResultStyle.SUCCESS if ok else ResultStyle.ERROR,
            exit_code=0 if ok else 1,
            payload=report.to_dict(),
            report=report,
        )

    return _run()
