"""
单调非线性项 F 的注册表与 Galerkin 求值

逐点型 (zero / odd_power / polynomial / exponential_type) 只在 de Rham 实现的 k = 0 场上定义;
抽象复形使用 custom, 直接提供系数空间上的载荷映射。
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from derham.quadrature import p1_values, quadrature_points, simplex_rule
from hilbert.complex import HilbertComplex
from utils.errors import LabError, UnsupportedDegreeError
from utils.utils import get_logger, make_rng, w_norm

logger = get_logger(__name__)

Coefficient = Union[float, Callable[[np.ndarray], np.ndarray]]


class NonlinearityKind(Enum):
    """非线性类型"""
    ZERO = "zero"
    ODD_POWER = "odd_power"
    POLYNOMIAL = "polynomial"
    EXPONENTIAL_TYPE = "exponential_type"   # a·sinh(b u)
    CUSTOM = "custom"                       # 系数空间载荷映射


@dataclass
class LipschitzRecord:
    """全局常数 C, 或局部 (C, M): 在 V-范数半径 M 内有效"""
    constant: float
    radius: Optional[float] = None
    admissible: Optional[bool] = None


@dataclass
class Nonlinearity:
    kind: NonlinearityKind = NonlinearityKind.ZERO
    m: int = 1
    # polynomial: coefficients[j] 为 u^j 的系数; exponential_type: (a, b)
    coefficients: Tuple[Coefficient, ...] = ()
    clamp: Optional[Tuple[float, float]] = None
    quadrature_order: Optional[int] = None
    lipschitz: Optional[LipschitzRecord] = None
    # custom: load(u) -> 载荷向量, jacobian(u) -> 矩阵
    load: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)
    # local_lipschitz_guard 设置: (中心系数, V-范数半径)
    guard: Optional[Tuple[np.ndarray, float]] = field(default=None, repr=False)
    label: str = ""

    def __post_init__(self):
        if self.kind == NonlinearityKind.ODD_POWER and (self.m < 1 or self.m % 2 == 0):
            raise LabError(f"odd_power needs an odd exponent m >= 1, got {self.m}")
        if self.kind == NonlinearityKind.EXPONENTIAL_TYPE and len(self.coefficients) != 2:
            raise LabError("exponential_type needs coefficients (a, b)")
        if self.kind == NonlinearityKind.CUSTOM and self.load is None:
            raise LabError("custom nonlinearity needs a load map")
        if self.clamp is not None and self.clamp[0] > self.clamp[1]:
            raise LabError(f"clamp interval {self.clamp} is empty")

    @property
    def pointwise(self) -> bool:
        return self.kind not in (NonlinearityKind.ZERO, NonlinearityKind.CUSTOM)

    @property
    def polynomial_degree(self) -> int:
        if self.kind == NonlinearityKind.ODD_POWER:
            return self.m
        if self.kind == NonlinearityKind.POLYNOMIAL:
            return max(len(self.coefficients) - 1, 0)
        return 1

    def quad_degree(self) -> int:
        """默认积分精确阶 2m+1"""
        if self.quadrature_order is not None:
            return int(self.quadrature_order)
        if self.kind == NonlinearityKind.EXPONENTIAL_TYPE:
            return 9
        return 2 * self.polynomial_degree + 1

    # ==================== 逐点求值 ====================

    def _coeff(self, j: int, x: Optional[np.ndarray], shape) -> np.ndarray:
        a = self.coefficients[j] if j < len(self.coefficients) else 0.0
        if callable(a):
            return np.asarray(a(x), dtype=float)
        return np.full(shape, float(a))

    def clamp_values(self, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """返回 (截断后的值, 未截断掩码)"""
        if self.clamp is None:
            return u, np.ones_like(u, dtype=bool)
        lo, hi = self.clamp
        return np.clip(u, lo, hi), (u >= lo) & (u <= hi)

    def value(self, u: np.ndarray, x: Optional[np.ndarray] = None) -> np.ndarray:
        """F(u) 逐点"""
        u, _ = self.clamp_values(np.asarray(u, dtype=float))
        if self.kind == NonlinearityKind.ZERO:
            return np.zeros_like(u)
        if self.kind == NonlinearityKind.ODD_POWER:
            return u ** self.m
        if self.kind == NonlinearityKind.POLYNOMIAL:
            out = np.zeros_like(u)
            for j in range(len(self.coefficients)):
                out = out + self._coeff(j, x, u.shape) * u ** j
            return out
        if self.kind == NonlinearityKind.EXPONENTIAL_TYPE:
            a, b = (self._coeff(0, x, u.shape), self._coeff(1, x, u.shape))
            return a * np.sinh(b * u)
        raise UnsupportedDegreeError("custom nonlinearities have no pointwise values")

    def derivative(self, u: np.ndarray, x: Optional[np.ndarray] = None) -> np.ndarray:
        """F'(u) 逐点; 截断区域导数为 0"""
        u = np.asarray(u, dtype=float)
        uc, inside = self.clamp_values(u)
        if self.kind == NonlinearityKind.ZERO:
            out = np.zeros_like(uc)
        elif self.kind == NonlinearityKind.ODD_POWER:
            out = self.m * uc ** (self.m - 1)
        elif self.kind == NonlinearityKind.POLYNOMIAL:
            out = np.zeros_like(uc)
            for j in range(1, len(self.coefficients)):
                out = out + j * self._coeff(j, x, uc.shape) * uc ** (j - 1)
        elif self.kind == NonlinearityKind.EXPONENTIAL_TYPE:
            a, b = (self._coeff(0, x, uc.shape), self._coeff(1, x, uc.shape))
            out = a * b * np.cosh(b * uc)
        else:
            raise UnsupportedDegreeError("custom nonlinearities have no pointwise derivative")
        return np.where(inside, out, 0.0)


def zero_nonlinearity() -> Nonlinearity:
    return Nonlinearity(kind=NonlinearityKind.ZERO, label="zero")


def odd_power(m: int, **kwargs) -> Nonlinearity:
    return Nonlinearity(kind=NonlinearityKind.ODD_POWER, m=m, label=f"u^{m}", **kwargs)


def polynomial(coefficients: Sequence[Coefficient], **kwargs) -> Nonlinearity:
    return Nonlinearity(kind=NonlinearityKind.POLYNOMIAL, coefficients=tuple(coefficients),
                        label="polynomial", **kwargs)


def exponential_type(a: float, b: float, **kwargs) -> Nonlinearity:
    return Nonlinearity(kind=NonlinearityKind.EXPONENTIAL_TYPE, coefficients=(a, b),
                        label=f"{a}*sinh({b}u)", **kwargs)


def custom(load: Callable[[np.ndarray], np.ndarray],
           jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None, label: str = "custom",
           **kwargs) -> Nonlinearity:
    return Nonlinearity(kind=NonlinearityKind.CUSTOM, load=load, jacobian=jacobian, label=label, **kwargs)


def from_spec(spec: dict) -> Nonlinearity:
    """
    由配置字典构造: {kind, m, coefficients, clamp, quadrature_order}
    """
    kind = NonlinearityKind(spec.get("kind", "zero"))
    clamp = tuple(spec["clamp"]) if spec.get("clamp") is not None else None
    common = {"clamp": clamp, "quadrature_order": spec.get("quadrature_order")}
    if kind == NonlinearityKind.ZERO:
        return Nonlinearity(kind=kind, label="zero", **common)
    if kind == NonlinearityKind.ODD_POWER:
        return odd_power(int(spec.get("m", 1)), **common)
    if kind == NonlinearityKind.POLYNOMIAL:
        return polynomial(spec.get("coefficients", []), **common)
    if kind == NonlinearityKind.EXPONENTIAL_TYPE:
        a, b = spec.get("coefficients", [1.0, 1.0])
        return exponential_type(float(a), float(b), **common)
    raise LabError("custom nonlinearities cannot be built from a configuration file")


# ==================== Galerkin 求值 ====================

def _pointwise_setup(F: Nonlinearity, c: HilbertComplex, k: int):
    real = c.realization
    if real is None:
        raise UnsupportedDegreeError(
            f"pointwise nonlinearity '{F.label}' needs a mesh realization; use a custom map on abstract complexes"
        )
    if k != 0:
        raise UnsupportedDegreeError(f"pointwise nonlinearity '{F.label}' is only defined for k = 0, got k = {k}")
    return real


def _check_guard(F: Nonlinearity, c: HilbertComplex, k: int, u: np.ndarray):
    if F.guard is None:
        return
    center, radius = F.guard
    dist = w_norm(c.graph_gram(k), u - center)
    if dist > radius:
        logger.warning("[evaluate_F] ‖u - u_center‖_V = %.3e exceeds local Lipschitz radius %.3e", dist, radius)


def evaluate_F(F: Nonlinearity, c: HilbertComplex, k: int, u: np.ndarray) -> np.ndarray:
    """
    载荷向量 b_i = ⟨F(u), φ_i⟩

    Args:
        F: 非线性项
        c: 复形 (逐点型需要 Whitney 实现)
        k: 次数
        u: 次数 k 的系数
    """
    u = c.check_vector(k, u)
    if F.kind == NonlinearityKind.ZERO:
        return np.zeros_like(u)
    if F.kind == NonlinearityKind.CUSTOM:
        return np.asarray(F.load(u), dtype=float)
    real = _pointwise_setup(F, c, k)
    _check_guard(F, c, k, u)
    mesh = real.mesh
    bary, w = simplex_rule(mesh.dim, F.quad_degree())
    full = real.scatter(0, u)
    uq = p1_values(mesh, full, bary)
    xq = quadrature_points(mesh, bary)
    fq = F.value(uq, xq)
    local = np.einsum("tq,q,qa->ta", fq, w, bary) * mesh.volumes()[:, None]
    out = np.zeros(mesh.count(0))
    np.add.at(out, mesh.top.ravel(), local.ravel())
    return real.gather(0, out)


def jacobian_F(F: Nonlinearity, c: HilbertComplex, k: int, u: np.ndarray,
               fd_step: float = 1e-7) -> sp.csr_matrix:
    """
    Galerkin Jacobian J_ij = ⟨F'(u) φ_j, φ_i⟩; custom 无解析 Jacobian 时用有限差分
    """
    u = c.check_vector(k, u)
    n = u.shape[0]
    if F.kind == NonlinearityKind.ZERO:
        return sp.csr_matrix((n, n))
    if F.kind == NonlinearityKind.CUSTOM:
        if F.jacobian is not None:
            return sp.csr_matrix(F.jacobian(u))
        base = evaluate_F(F, c, k, u)
        cols = []
        for j in range(n):
            e = np.zeros(n)
            step = fd_step * max(1.0, abs(u[j]))
            e[j] = step
            cols.append((evaluate_F(F, c, k, u + e) - base) / step)
        return sp.csr_matrix(np.column_stack(cols) if cols else np.zeros((0, 0)))
    real = _pointwise_setup(F, c, k)
    mesh = real.mesh
    bary, w = simplex_rule(mesh.dim, F.quad_degree())
    full = real.scatter(0, u)
    uq = p1_values(mesh, full, bary)
    xq = quadrature_points(mesh, bary)
    dq = F.derivative(uq, xq)
    local = np.einsum("tq,q,qa,qb->tab", dq, w, bary, bary) * mesh.volumes()[:, None, None]
    top = mesh.top
    nloc = top.shape[1]
    rows = np.repeat(top, nloc, axis=1).ravel()
    cols = np.tile(top, (1, nloc)).ravel()
    full_j = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.count(0), mesh.count(0))).tocsr()
    dofs = real.dofs[0]
    return full_j[dofs][:, dofs].tocsr()


# ==================== 检查 ====================

@dataclass
class MonotonicityReport:
    passed: bool
    min_ratio: float
    samples: int
    witness: Optional[Tuple[np.ndarray, np.ndarray]] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "min_ratio": self.min_ratio, "samples": self.samples}


def _random_fields(c: HilbertComplex, k: int, rng: np.random.Generator, scale: float) -> np.ndarray:
    return scale * rng.standard_normal(c.dim(k))


def check_monotone(F: Nonlinearity, c: HilbertComplex, k: int, samples: int = 200,
                   seed: int = 0, scale: float = 1.0) -> MonotonicityReport:
    """
    抽样检查 ⟨Fu - Fv, u - v⟩ >= -1e-12 ‖u-v‖², 返回最小比值与反例
    """
    rng = make_rng(seed)
    m = c.gram_at(k)
    worst = math.inf
    witness = None
    for _ in range(samples):
        u = _random_fields(c, k, rng, scale)
        v = _random_fields(c, k, rng, scale)
        diff = u - v
        nrm2 = float(diff @ (m @ diff))
        if nrm2 == 0.0:
            continue
        pairing = float((evaluate_F(F, c, k, u) - evaluate_F(F, c, k, v)) @ diff)
        ratio = pairing / nrm2
        if ratio < worst:
            worst, witness = ratio, (u, v)
    passed = worst >= -1e-12
    if not passed:
        logger.info("[check_monotone] '%s' fails: min ratio %.3e", F.label, worst)
    return MonotonicityReport(passed=passed, min_ratio=float(worst), samples=samples, witness=witness)


@dataclass
class HemicontinuityReport:
    passed: bool
    max_jump: float
    samples: int

    def to_dict(self) -> dict:
        return {"passed": self.passed, "max_jump": self.max_jump, "samples": self.samples}


def check_hemicontinuity(F: Nonlinearity, c: HilbertComplex, k: int, samples: int = 20, grid: int = 64,
                         seed: int = 0, jump_tol: float = 1e-2) -> HemicontinuityReport:
    """
    沿线段抽样 t ↦ ⟨F(u + t v), w⟩, t ∈ [0, 1]

    相邻网格点的最大跳跃 (相对于函数幅度) 随网格加密应趋于 0;
    这里只检查 grid 上的跳跃是否低于 jump_tol。
    """
    rng = make_rng(seed)
    ts = np.linspace(0.0, 1.0, grid + 1)
    worst = 0.0
    for _ in range(samples):
        u = _random_fields(c, k, rng, 1.0)
        v = _random_fields(c, k, rng, 1.0)
        w = _random_fields(c, k, rng, 1.0)
        vals = np.array([float(evaluate_F(F, c, k, u + t * v) @ w) for t in ts])
        scale = max(np.abs(vals).max(), 1.0)
        worst = max(worst, float(np.abs(np.diff(vals)).max() / scale))
    return HemicontinuityReport(passed=worst <= jump_tol, max_jump=worst, samples=samples)


# ==================== 局部 Lipschitz ====================

def critical_exponent(n: int) -> float:
    """(n+2)/(n-2), n <= 2 时为无穷"""
    if n <= 2:
        return math.inf
    return (n + 2) / (n - 2)


def local_lipschitz_guard(F: Nonlinearity, u_center: np.ndarray, radius: float,
                          order_interval: Optional[Tuple[float, float]] = None,
                          space_dim: int = 1) -> Nonlinearity:
    """
    给多项式型 F 加上序区间截断和局部 Lipschitz 记录

    Args:
        u_center: 中心点系数
        radius: V-范数半径 M, 超出时求值记警告
        order_interval: 截断区间; 缺省时取 [-‖u_center‖_∞, ‖u_center‖_∞]
        space_dim: 空间维数 n, 用于临界指数判定 m <= (n+2)/(n-2)
    """
    if F.kind not in (NonlinearityKind.ODD_POWER, NonlinearityKind.POLYNOMIAL):
        raise LabError(f"local Lipschitz guard needs a polynomial nonlinearity, got {F.kind.value}")
    u_center = np.asarray(u_center, dtype=float)
    if not np.all(np.isfinite(u_center)):
        raise LabError("u_center must be finite")
    if order_interval is None:
        bound = float(np.abs(u_center).max()) if u_center.size else 0.0
        order_interval = (-bound, bound)
    lo, hi = float(order_interval[0]), float(order_interval[1])
    # 截断后 |F'(u)| 在区间上有界
    grid = np.linspace(lo, hi, 201)
    constant = float(np.abs(replace(F, clamp=None).derivative(grid)).max())
    admissible = F.polynomial_degree <= critical_exponent(space_dim)
    record = LipschitzRecord(constant=constant, radius=float(radius), admissible=admissible)
    logger.debug("[local_lipschitz_guard] clamp=[%g, %g] C=%.3e admissible=%s", lo, hi, constant, admissible)
    return replace(F, clamp=(lo, hi), lipschitz=record, guard=(u_center, float(radius)),
                   label=f"{F.label}|[{lo:g},{hi:g}]")
