"""
收敛率拟合与断言

斜率由 (log h, log e) 的最小二乘给出; 断言只看最细的若干层, 粗层的预渐近误差不参与。
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.stats import linregress

from utils.utils import get_logger

logger = get_logger(__name__)

RATE_WINDOW = 3
RATE_TOLERANCE = 0.15


@dataclass
class RateFit:
    slope: float
    stderr: float
    intercept: float
    points: int

    def to_dict(self) -> dict:
        return {"slope": self.slope, "stderr": self.stderr, "intercept": self.intercept, "points": self.points}


def fit_loglog_slope(h: Sequence[float], e: Sequence[float]) -> RateFit:
    """
    e ≈ C h^q 的最小二乘拟合

    Args:
        h: 网格尺寸 (或 ε 等自变量), 全部为正
        e: 对应误差, 全部为正
    Returns:
        RateFit, 两点时 stderr 为 0
    """
    x = np.asarray(h, dtype=float)
    y = np.asarray(e, dtype=float)
    if x.shape != y.shape or x.size < 2:
        raise ValueError(f"need at least two (h, e) pairs of equal length, got {x.size} and {y.size}")
    if np.any(x <= 0.0) or np.any(y <= 0.0) or not np.all(np.isfinite(y)):
        raise ValueError("log-log fit needs positive finite values")
    lx, ly = np.log(x), np.log(y)
    if x.size == 2:
        slope = float((ly[1] - ly[0]) / (lx[1] - lx[0]))
        return RateFit(slope=slope, stderr=0.0, intercept=float(ly[0] - slope * lx[0]), points=2)
    res = linregress(lx, ly)
    return RateFit(slope=float(res.slope), stderr=float(res.stderr), intercept=float(res.intercept),
                   points=int(x.size))


@dataclass
class RateCheck:
    name: str
    measured: Optional[float]
    expected: float
    tolerance: float

    @property
    def passed(self) -> bool:
        if self.measured is None or not np.isfinite(self.measured):
            return False
        return abs(self.measured - self.expected) <= self.tolerance

    def to_dict(self) -> dict:
        return {"name": self.name, "measured": self.measured, "expected": self.expected,
                "tolerance": self.tolerance, "passed": self.passed}


def windowed_fit(h: Sequence[float], e: Sequence[float], window: int = RATE_WINDOW) -> Optional[RateFit]:
    """最细 window 层上的拟合; 误差含零 (精确解落在离散空间) 时返回 None"""
    h_w = list(h)[-window:]
    e_w = list(e)[-window:]
    if len(h_w) < 2 or min(e_w) <= 0.0:
        return None
    return fit_loglog_slope(h_w, e_w)


@dataclass
class MonotoneFlag:
    """非增检查; 最粗一层的单次反转被容许但记录"""
    nonincreasing: bool
    inversions: List[int] = field(default_factory=list)

    @property
    def tolerated(self) -> bool:
        return self.nonincreasing or self.inversions == [1]

    def to_dict(self) -> dict:
        return {"nonincreasing": self.nonincreasing, "inversions": self.inversions, "tolerated": self.tolerated}


def monotone_flag(values: Sequence[float], rtol: float = 1e-12) -> MonotoneFlag:
    vals = [float(v) for v in values]
    inversions = [i for i in range(1, len(vals)) if vals[i] > vals[i - 1] * (1.0 + rtol) + 1e-300]
    if inversions:
        logger.warning("[monotone_flag] sequence increases at levels %s", inversions)
    return MonotoneFlag(nonincreasing=not inversions, inversions=inversions)
