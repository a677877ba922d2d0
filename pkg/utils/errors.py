"""
实验室统一异常层级

所有数值模块抛出的异常都继承自 LabError, CLI 在最外层统一捕获并转成退出码 1。
检查类操作 (validate_complex / check_monotone / 收敛率断言) 失败时返回报告对象, 不抛异常。
"""

from typing import Any, Optional, Sequence

import numpy as np


class LabError(Exception):
    """实验室异常基类"""


class ShapeMismatchError(LabError):
    """矩阵形状无法构成链复形"""

    def __init__(self, degree: int, message: str):
        self.degree = degree
        super().__init__(f"degree {degree}: {message}")


class NonSPDGramError(LabError):
    """Gram 矩阵不是对称正定的"""

    def __init__(self, degree: int, eigenvalue: float):
        self.degree = degree
        self.eigenvalue = float(eigenvalue)
        super().__init__(
            f"Gram matrix of degree {degree} is not SPD (smallest eigenvalue {eigenvalue:.3e})"
        )


class DegreeOutOfRangeError(LabError):
    def __init__(self, degree: int, k_min: int, k_max: int):
        self.degree = degree
        super().__init__(f"degree {degree} outside complex range [{k_min}, {k_max}]")


class DimensionMismatchError(LabError):
    def __init__(self, expected: int, got: int, what: str = "vector"):
        super().__init__(f"{what} has {got} entries, expected {expected}")


class EmptyPerpSpaceError(LabError):
    """Z^{k⊥} 为零空间, Poincaré 不等式无意义"""

    def __init__(self, degree: int):
        self.degree = degree
        super().__init__(f"degree {degree}: orthogonal complement of cocycles is empty")


class FactorizationError(LabError):
    def __init__(self, message: str, condition_estimate: Optional[float] = None):
        self.condition_estimate = condition_estimate
        if condition_estimate is not None:
            message = f"{message} (condition estimate {condition_estimate:.3e})"
        super().__init__(message)


class MaxIterationsError(LabError):
    """迭代达到上限; 携带最好的迭代值和残差历史"""

    def __init__(self, message: str, best_iterate: Optional[np.ndarray] = None,
                 residual_history: Sequence[float] = ()):
        self.best_iterate = best_iterate
        self.residual_history = list(residual_history)
        super().__init__(message)


class NonMonotoneError(LabError):
    def __init__(self, message: str, witness: Any = None):
        self.witness = witness
        super().__init__(message)


class UnsupportedDegreeError(LabError):
    pass


class UnsupportedDimensionError(LabError):
    pass


class RankDeficientError(LabError):
    pass


class ConvergenceError(LabError):
    """幂迭代等不收敛; best_estimate 仍可使用"""

    def __init__(self, message: str, best_estimate: float, iterations: int):
        self.best_estimate = best_estimate
        self.iterations = iterations
        super().__init__(f"{message} (best estimate {best_estimate:.6e} after {iterations} iterations)")


class UnknownCaseError(LabError):
    pass


class MeshError(LabError):
    pass


class CrimeSynthesisError(LabError):
    def __init__(self, degree: int, eigenvalue: float):
        self.degree = degree
        self.eigenvalue = float(eigenvalue)
        super().__init__(
            f"perturbed Gram of degree {degree} loses definiteness (1 + eps*lambda_min(S) = {eigenvalue:.3e})"
        )


class ConfigError(LabError):
    """配置文件错误, 每行一个可操作的提示"""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))
