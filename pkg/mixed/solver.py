"""
线性混合问题的求解、解算子 K 与 **K** = K ⊕ P_H, 以及稳定性常数的测量
"""

import threading
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import splu, spsolve

from hilbert.complex import HilbertComplex
from hilbert.hodge import harmonic_basis, poincare_constant
from hilbert.subspaces import as_dense
from mixed.power import PowerEstimate, power_norm
from mixed.saddle import SaddleSystem, assemble_mixed
from utils.errors import EmptyPerpSpaceError, FactorizationError
from utils.utils import get_logger, make_rng, w_norm

logger = get_logger(__name__)

# 稠密 inf-sup 计算的规模提示阈值
INF_SUP_DENSE_WARN = 3000


@dataclass
class MixedSolution:
    """
    (σ, u, p) 及残差; p = H · p_coeffs
    """
    degree: int
    sigma: np.ndarray
    u: np.ndarray
    p_coeffs: np.ndarray
    p: np.ndarray
    residual_norm: float
    rhs_norm: float = 0.0
    stability_ratio: float = 0.0
    method: str = "direct"

    @property
    def bold_u(self) -> np.ndarray:
        """**u** = u + p"""
        return self.u + self.p

    def norms(self, c: HilbertComplex) -> Dict[str, float]:
        k = self.degree
        return {
            "sigma_V": w_norm(c.graph_gram(k - 1), self.sigma) if self.sigma.size else 0.0,
            "u_V": w_norm(c.graph_gram(k), self.u),
            "p_W": w_norm(c.gram_at(k), self.p),
        }

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "sigma": self.sigma.tolist(),
            "u": self.u.tolist(),
            "p": self.p.tolist(),
            "p_coeffs": self.p_coeffs.tolist(),
            "residual_norm": self.residual_norm,
            "rhs_norm": self.rhs_norm,
            "stability_ratio": self.stability_ratio,
            "method": self.method,
        }


def _dual_norm(c: HilbertComplex, k: int, b: np.ndarray) -> float:
    """载荷 b 对应系数 M⁻¹b 的 W-范数"""
    if b.size == 0:
        return 0.0
    return float(np.sqrt(max(float(b @ spsolve(c.gram_at(k).tocsc(), b)), 0.0)))


def data_norm(c: HilbertComplex, k: int, f: np.ndarray, load: bool = False) -> float:
    return _dual_norm(c, k, f) if load else w_norm(c.gram_at(k), f)


def solution_from_vector(system: SaddleSystem, x: np.ndarray, rhs: np.ndarray, f_norm: float,
                         method: str = "direct", extra: Optional[np.ndarray] = None) -> MixedSolution:
    """由鞍点系统的解向量组装 MixedSolution"""
    sigma, u, coeffs = system.split(x)
    p = system.harmonic @ coeffs
    sol = MixedSolution(
        degree=system.degree,
        sigma=sigma.copy(),
        u=u.copy(),
        p_coeffs=coeffs.copy(),
        p=p,
        residual_norm=system.relative_residual(x, rhs, extra),
        rhs_norm=f_norm,
        method=method,
    )
    norms = sol.norms(system.complex)
    total = norms["sigma_V"] + norms["u_V"] + norms["p_W"]
    sol.stability_ratio = float(total / f_norm) if f_norm > 0.0 else 0.0
    return sol


def solve_mixed_linear(c: HilbertComplex, k: int, f: np.ndarray, load: bool = False,
                       method: str = "direct", system: Optional[SaddleSystem] = None) -> MixedSolution:
    """
    解线性混合 Hodge-Laplace 问题

    Args:
        c: 复形
        k: 次数
        f: W^k 系数 (load=True 时为载荷 ⟨f, φ_i⟩)
        method: 'direct' (稀疏 LU) 或 'minres'
        system: 复用已组装的系统 (及其分解)
    Returns:
        MixedSolution
    """
    system = system if system is not None else assemble_mixed(c, k)
    rhs = system.rhs(f, load)
    x = system.solve(rhs, method)
    sol = solution_from_vector(system, x, rhs, data_norm(c, k, f, load), method)
    logger.info("[solve_mixed_linear] k=%d n=%d residual=%.3e", k, system.shape[0], sol.residual_norm)
    return sol


# ==================== 解算子 ====================

@dataclass(eq=False)
class SolutionOperators:
    """
    K: f ↦ u;  **K**: f ↦ u + P_H f;  **L** = L ⊕ P_H
    """
    complex: HilbertComplex
    degree: int
    system: SaddleSystem
    method: str = "direct"
    _mass_factor: object = field(default=None, init=False, repr=False)
    _prev_factor: object = field(default=None, init=False, repr=False)
    _norms: Dict[str, PowerEstimate] = field(default_factory=dict, init=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    def __post_init__(self):
        c, k = self.complex, self.degree
        self._mass_factor = splu(c.gram_at(k).tocsc())
        if c.dim(k - 1):
            self._prev_factor = splu(c.gram_at(k - 1).tocsc())

    @property
    def harmonic(self) -> np.ndarray:
        return self.system.harmonic

    def solve(self, f: np.ndarray, load: bool = False) -> MixedSolution:
        return solve_mixed_linear(self.complex, self.degree, f, load, self.method, self.system)

    def apply_K(self, f: np.ndarray, load: bool = False) -> np.ndarray:
        return self.solve(f, load).u

    def apply_bold_K(self, f: np.ndarray, load: bool = False) -> np.ndarray:
        return self.solve(f, load).bold_u

    def apply_P_H(self, x: np.ndarray) -> np.ndarray:
        h = self.harmonic
        return h @ (h.T @ (self.complex.gram_at(self.degree) @ x))

    def apply_intersection(self, x: np.ndarray) -> np.ndarray:
        """M **L** x = M G M⁰⁻¹ GᵀM x + DᵀM⁺D x + M H HᵀM x"""
        c, k = self.complex, self.degree
        m = c.gram_at(k)
        mx = m @ x
        d = c.diff_at(k)
        out = d.T @ (c.gram_at(k + 1) @ (d @ x))
        if self._prev_factor is not None:
            g = c.diff_at(k - 1)
            out = out + m @ (g @ self._prev_factor.solve(g.T @ mx))
        h = self.harmonic
        if h.shape[1]:
            out = out + m @ (h @ (h.T @ mx))
        return np.asarray(out, dtype=float)

    def apply_bold_L(self, x: np.ndarray) -> np.ndarray:
        """**L** x = L x + P_H x"""
        return self._mass_factor.solve(self.apply_intersection(x))

    def intersection_inner(self, x: np.ndarray, y: np.ndarray) -> float:
        """V∩V* 内积 ⟨x, y⟩ = yᵀ M **L** x"""
        return float(y @ self.apply_intersection(x))

    def intersection_norm(self, x: np.ndarray) -> float:
        return float(np.sqrt(max(self.intersection_inner(x, x), 0.0)))

    def norm(self, which: str = "bold", **kwargs) -> PowerEstimate:
        """W-范数下 ‖**K**‖ (which='bold') 或 ‖K‖ (which='K'), 首次调用时计算并缓存"""
        with self._lock:
            cached = self._norms.get(which)
        if cached is not None:
            return cached
        apply = self.apply_bold_K if which == "bold" else self.apply_K
        estimate = power_norm(apply, self.complex.gram_at(self.degree), **kwargs)
        with self._lock:
            self._norms[which] = estimate
        return estimate


def solution_operators(c: HilbertComplex, k: int, method: str = "direct") -> SolutionOperators:
    return SolutionOperators(complex=c, degree=k, system=assemble_mixed(c, k), method=method)


def apply_bold_K(ops: SolutionOperators, f: np.ndarray, load: bool = False) -> np.ndarray:
    """**K** f = u + p"""
    return ops.apply_bold_K(f, load)


def operator_norm_K(ops: SolutionOperators, which: str = "bold", **kwargs) -> PowerEstimate:
    """
    W-范数下的 ‖**K**‖ 幂迭代估计 (容差 1e-8, 最多 10000 次)

    不收敛时抛出 ConvergenceError, 其中带有最好的估计
    """
    return ops.norm(which, **kwargs)


# ==================== 稠密形式 ====================

def intersection_gram(c: HilbertComplex, k: int) -> np.ndarray:
    """
    V∩V* Gram: M G M⁰⁻¹ GᵀM + DᵀM⁺D + M H HᵀM (稠密, 对称正定)
    """
    c.require(k)
    m = as_dense(c.gram_at(k))
    d = c.diff_at(k)
    out = as_dense(d.T @ c.gram_at(k + 1) @ d)
    if c.dim(k - 1):
        gtm = as_dense(c.diff_at(k - 1).T) @ m
        out = out + gtm.T @ sla.cho_solve(sla.cho_factor(as_dense(c.gram_at(k - 1))), gtm)
    mh = m @ harmonic_basis(c, k)
    out = out + mh @ mh.T
    return 0.5 * (out + out.T)


def bold_L_matrix(c: HilbertComplex, k: int) -> np.ndarray:
    """**L** = M⁻¹ · intersection_gram"""
    m = as_dense(c.gram_at(k))
    return sla.cho_solve(sla.cho_factor(m), intersection_gram(c, k))


def unmixed_solve(c: HilbertComplex, k: int, f: np.ndarray, load: bool = False) -> np.ndarray:
    """
    解单个对称正定系统 (M **L**) **u** = M f, 结果即 **K** f
    """
    f = c.check_vector(k, f, "right-hand side")
    a = intersection_gram(c, k)
    b = f if load else c.gram_at(k) @ f
    try:
        factor = sla.cho_factor(a)
    except np.linalg.LinAlgError as e:
        raise FactorizationError(f"unmixed matrix of degree {k} is not positive definite",
                                 float(np.linalg.cond(a))) from e
    return sla.cho_solve(factor, b)


# ==================== 稳定性 ====================

def _block_diag_dense(blocks: List[np.ndarray]) -> np.ndarray:
    return sla.block_diag(*blocks) if blocks else np.zeros((0, 0))


def inf_sup_constant(system: SaddleSystem) -> float:
    """
    V × V × ℝ^{dim H} 乘积范数下的 inf-sup 常数

    γ = σ_min(L_N⁻¹ A L_N⁻ᵀ), N = blockdiag(V-Gram^{k-1}, V-Gram^k, I) = L_N L_Nᵀ
    """
    c, k = system.complex, system.degree
    n = system.shape[0]
    if n == 0:
        return 0.0
    if n > INF_SUP_DENSE_WARN:
        logger.warning("[inf_sup_constant] dense singular values of a %d x %d system", n, n)
    blocks = []
    if system.n_sigma:
        blocks.append(as_dense(c.graph_gram(k - 1)))
    blocks.append(as_dense(c.graph_gram(k)))
    if system.n_p:
        blocks.append(np.eye(system.n_p))
    chol = sla.cholesky(_block_diag_dense(blocks), lower=True)
    a = system.matrix.toarray()
    left = sla.solve_triangular(chol, a, lower=True)
    normalized = sla.solve_triangular(chol, left.T, lower=True).T
    gamma = float(sla.svdvals(normalized).min())
    logger.debug("[inf_sup_constant] k=%d gamma=%.6g", k, gamma)
    return gamma


@dataclass
class StabilityReport:
    """(‖σ‖_V + ‖u‖_V + ‖p‖)/‖f‖ 的实测值与由 c_P 预测的上界 (1 + c_P)²"""
    degree: int
    ratios: List[float]
    max_ratio: float
    poincare: Optional[float]
    predicted: Optional[float]
    family_factor: Optional[float]

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "max_ratio": self.max_ratio,
            "poincare": self.poincare,
            "predicted": self.predicted,
            "family_factor": self.family_factor,
            "samples": len(self.ratios),
        }


def stability_report(c: HilbertComplex, k: int, samples: int = 20, seed: int = 0,
                     ops: Optional[SolutionOperators] = None) -> StabilityReport:
    ops = ops if ops is not None else solution_operators(c, k)
    rng = make_rng(seed)
    ratios = [ops.solve(rng.standard_normal(c.dim(k))).stability_ratio for _ in range(samples)]
    constants = []
    for j in (k - 1, k):
        if not c.in_range(j):
            continue
        try:
            constants.append(poincare_constant(c, j).constant)
        except EmptyPerpSpaceError:
            continue
    c_p = max(constants) if constants else None
    predicted = (1.0 + c_p) ** 2 if c_p is not None else None
    max_ratio = max(ratios) if ratios else 0.0
    factor = max_ratio / predicted if predicted else None
    return StabilityReport(degree=k, ratios=ratios, max_ratio=float(max_ratio), poincare=c_p,
                           predicted=predicted, family_factor=factor)


def mixed_lipschitz_bound(gamma: float, lipschitz: float, norm_K: float) -> float:
    """
    半线性混合问题解映射的 Lipschitz 上界 (√3/γ)(1 + C‖**K**‖)

    Args:
        gamma: inf-sup 常数
        lipschitz: F 的 Lipschitz 常数 C (W -> W)
        norm_K: W-范数下的 ‖**K**‖
    """
    if gamma <= 0.0:
        return float("inf")
    return float(np.sqrt(3.0) / gamma * (1.0 + lipschitz * norm_K))
