"""Gram 范数空间之间的幂迭代算子范数"""

from dataclasses import dataclass
from typing import Any, Callable, Optional

import numpy as np

from utils.errors import ConvergenceError
from utils.utils import get_logger, make_rng, w_norm

logger = get_logger(__name__)

POWER_TOL = 1e-8
POWER_MAX_ITER = 10000


@dataclass
class PowerEstimate:
    value: float
    iterations: int
    converged: bool

    def to_dict(self) -> dict:
        return {"value": self.value, "iterations": self.iterations, "converged": self.converged}


def power_norm(apply: Callable[[np.ndarray], np.ndarray], gram_in: Any,
               apply_adjoint: Optional[Callable[[np.ndarray], np.ndarray]] = None,
               tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER, seed: int = 0,
               raise_on_failure: bool = True) -> PowerEstimate:
    """
    ‖T‖ 的幂迭代估计

    Args:
        apply: x ↦ T x
        gram_in: 输入空间的 Gram 矩阵
        apply_adjoint: 给出时对 T*T 迭代并取平方根; 缺省时假定 T 在 gram_in 下自伴半正定
        tol: Rayleigh 商的相对变化阈值
        raise_on_failure: False 时不收敛也返回 (converged=False)
    Returns:
        PowerEstimate
    """
    n = gram_in.shape[0]
    if n == 0:
        return PowerEstimate(0.0, 0, True)

    def step(x):
        y = apply(x)
        return apply_adjoint(y) if apply_adjoint is not None else y

    x = make_rng(seed).standard_normal(n)
    x = x / w_norm(gram_in, x)
    estimate = 0.0
    for it in range(1, max_iter + 1):
        y = step(x)
        rayleigh = abs(float(x @ (gram_in @ y)))
        ny = w_norm(gram_in, y)
        if ny == 0.0:
            return PowerEstimate(0.0, it, True)
        x = y / ny
        if it > 1 and abs(rayleigh - estimate) <= tol * max(rayleigh, np.finfo(float).tiny):
            estimate = rayleigh
            value = np.sqrt(estimate) if apply_adjoint is not None else estimate
            logger.debug("[power_norm] %.10g after %d iterations", value, it)
            return PowerEstimate(float(value), it, True)
        estimate = rayleigh
    value = float(np.sqrt(estimate) if apply_adjoint is not None else estimate)
    if raise_on_failure:
        raise ConvergenceError("power iteration did not converge", value, max_iter)
    logger.warning("[power_norm] not converged after %d iterations, best estimate %.6g", max_iter, value)
    return PowerEstimate(value, max_iter, False)
