"""
人造解 (manufactured solutions) 与误差范数

四个标量 Dirichlet 算例, 源项 f = -Δu* + F(u*):
  (a) interval_linear   u* = sin(πx)
  (b) interval_cubic    u* = sin(πx), F u = u³
  (c) square_linear     u* = sin(πx) sin(πy)
  (d) square_cubic      u* = sin(πx) sin(πy), F u = u³
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from derham.mesh import SimplicialMesh
from derham.quadrature import (
    integrate,
    load_vector,
    p1_gradients,
    p1_values,
    quadrature_points,
    simplex_rule,
)
from derham.whitney import whitney_complex
from hilbert.complex import HilbertComplex
from semilinear.nonlinearity import Nonlinearity, NonlinearityKind, odd_power, zero_nonlinearity
from utils.errors import MeshError, UnknownCaseError, UnsupportedDegreeError
from utils.utils import get_logger

logger = get_logger(__name__)

Sampler = Callable[[np.ndarray], np.ndarray]

# 载荷积分阶; 误差范数积分阶
LOAD_QUADRATURE = 11
ERROR_QUADRATURE = 5


def _sin_1d(x: np.ndarray) -> np.ndarray:
    return np.sin(np.pi * x[..., 0])


def _grad_sin_1d(x: np.ndarray) -> np.ndarray:
    return (np.pi * np.cos(np.pi * x[..., 0]))[..., None]


def _sin_2d(x: np.ndarray) -> np.ndarray:
    return np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1])


def _grad_sin_2d(x: np.ndarray) -> np.ndarray:
    sx, sy = np.sin(np.pi * x[..., 0]), np.sin(np.pi * x[..., 1])
    cx, cy = np.cos(np.pi * x[..., 0]), np.cos(np.pi * x[..., 1])
    return np.stack([np.pi * cx * sy, np.pi * sx * cy], axis=-1)


@dataclass(frozen=True)
class ManufacturedCase:
    name: str
    dim: int
    exact: Sampler
    grad_exact: Sampler
    # -Δu* = laplace_factor · u*
    laplace_factor: float
    default_F: Callable[[], Nonlinearity]


CASES: Dict[str, ManufacturedCase] = {
    "interval_linear": ManufacturedCase("interval_linear", 1, _sin_1d, _grad_sin_1d, np.pi ** 2, zero_nonlinearity),
    "interval_cubic": ManufacturedCase("interval_cubic", 1, _sin_1d, _grad_sin_1d, np.pi ** 2, lambda: odd_power(3)),
    "square_linear": ManufacturedCase("square_linear", 2, _sin_2d, _grad_sin_2d, 2 * np.pi ** 2, zero_nonlinearity),
    "square_cubic": ManufacturedCase("square_cubic", 2, _sin_2d, _grad_sin_2d, 2 * np.pi ** 2, lambda: odd_power(3)),
}

ALIASES = {"a": "interval_linear", "b": "interval_cubic", "c": "square_linear", "d": "square_cubic"}


def get_case(name: str) -> ManufacturedCase:
    key = ALIASES.get(name, name)
    if key not in CASES:
        raise UnknownCaseError(
            f"unknown manufactured case '{name}' (known: {', '.join(sorted(CASES))}; aliases a-d)"
        )
    return CASES[key]


@dataclass
class ManufacturedProblem:
    """离散载荷 ⟨f, φ_i⟩ 与精确解采样器; complex 为零迹 (或自然) Whitney 复形"""
    case: ManufacturedCase
    complex: HilbertComplex
    load: np.ndarray
    F: Nonlinearity
    source: Sampler = field(repr=False)

    @property
    def name(self) -> str:
        return self.case.name

    @property
    def exact(self) -> Sampler:
        return self.case.exact

    @property
    def grad_exact(self) -> Sampler:
        return self.case.grad_exact


def manufactured_problem(name: str, mesh: SimplicialMesh, k: int = 0, F: Optional[Nonlinearity] = None,
                         essential: bool = True, workers: int = 1) -> ManufacturedProblem:
    """
    构造人造解问题

    Args:
        name: 算例名或别名 a-d
        mesh: 与算例维数一致的网格
        k: 只支持 0
        F: 覆盖算例自带的非线性项; 源项按实际使用的 F 生成
        essential: 零迹空间 (Dirichlet)
    Returns:
        ManufacturedProblem
    """
    case = get_case(name)
    if k != 0:
        raise UnsupportedDegreeError(f"manufactured scalar problems are posed at k = 0, got k = {k}")
    if mesh.dim != case.dim:
        raise MeshError(f"case '{case.name}' needs a dimension-{case.dim} mesh, got '{mesh.name}' (dim {mesh.dim})")
    F = F if F is not None else case.default_F()
    if F.kind == NonlinearityKind.CUSTOM:
        raise UnsupportedDegreeError("manufactured sources need a pointwise nonlinearity")

    def source(x: np.ndarray) -> np.ndarray:
        u = case.exact(x)
        return case.laplace_factor * u + F.value(u, x)

    c = whitney_complex(mesh, essential=essential, workers=workers)
    full = load_vector(mesh, source, LOAD_QUADRATURE)
    load = c.realization.gather(0, full)
    logger.debug("[manufactured_problem] %s on %s: %d dofs", case.name, mesh.name, load.shape[0])
    return ManufacturedProblem(case=case, complex=c, load=load, F=F, source=source)


def error_norms(c: HilbertComplex, u: np.ndarray, exact: Sampler, grad_exact: Sampler,
                degree: int = ERROR_QUADRATURE) -> Dict[str, float]:
    """
    k = 0 场相对精确解的 W (L²) 与 V (H¹) 误差

    Returns:
        {"W": ..., "V": ..., "grad": ...}
    """
    real = c.realization
    mesh = real.mesh
    full = real.scatter(0, c.check_vector(0, u))
    bary, w = simplex_rule(mesh.dim, degree)
    pts = quadrature_points(mesh, bary)
    diff = p1_values(mesh, full, bary) - exact(pts)
    err_w2 = integrate(mesh, diff * diff, w)
    gdiff = p1_gradients(mesh, full)[:, None, :] - grad_exact(pts)
    err_g2 = integrate(mesh, np.sum(gdiff * gdiff, axis=-1), w)
    return {
        "W": float(np.sqrt(err_w2)),
        "V": float(np.sqrt(err_w2 + err_g2)),
        "grad": float(np.sqrt(err_g2)),
    }
