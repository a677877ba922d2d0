"""
最佳逼近误差与逼近系数 δ, η, μ

所有量都在细网格复形上计算, 粗空间经 i_h 嵌入其中:
    δ = ‖(I - i π) K‖,  μ = ‖(I - i π) P_H‖,
    η = max(‖(I - i π) d K_k‖, ‖(I - i π) d* K_k‖, ‖(I - i π) d K_{k-1}‖, ‖(I - i π) d* K_{k+1}‖)
    后两项定义在相邻次数 W^{k∓1} 上, 值域为 W^k。
范数均为 W → W, 由复合映射上的幂迭代给出。
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as sla

from derham.mesh import EllipseCurve, family_mesh
from derham.refine import ProlongationMorphism, compose, refine_uniform
from derham.whitney import whitney_complex
from hilbert.complex import HilbertComplex
from hilbert.hodge import adjoint_differential, harmonic_basis
from hilbert.subspaces import as_dense, matrix_rank
from lab.rates import MonotoneFlag, RateFit, monotone_flag, windowed_fit
from mixed.power import PowerEstimate, power_norm
from mixed.solver import intersection_gram
from utils.errors import DimensionMismatchError, RankDeficientError
from utils.utils import get_logger, w_norm

logger = get_logger(__name__)

COEFF_HEADER = ["level", "h", "delta", "eta", "mu", "converged"]


# ==================== 最佳逼近 ====================

def best_approx_error(c_fine: HilbertComplex, injection, w: np.ndarray, k: int = 0, norm: str = "W") -> float:
    """
    E(w) = inf_{v ∈ V_h} ‖w - i v‖, 在 Gram 内积下解法方程

    Args:
        c_fine: 细网格复形
        injection: i_h^k, (细维数 × 粗维数), 列必须线性无关
        w: 细网格上的系数向量
        k: 次数
        norm: "W" (M^k) 或 "V" (图范数 Gram)
    Returns:
        距离 ‖w - i y*‖
    """
    if norm == "W":
        gram = c_fine.gram_at(k)
    elif norm == "V":
        gram = c_fine.graph_gram(k)
    else:
        raise ValueError(f"unknown norm '{norm}' (expected 'W' or 'V')")
    w = c_fine.check_vector(k, w, "target")
    inj = as_dense(injection)
    if inj.shape[0] != w.shape[0]:
        raise DimensionMismatchError(w.shape[0], inj.shape[0], "injection rows")
    if inj.shape[1] == 0:
        return w_norm(gram, w)
    if matrix_rank(inj) < inj.shape[1]:
        raise RankDeficientError(f"injection of degree {k} has dependent columns "
                                 f"(rank {matrix_rank(inj)} < {inj.shape[1]})")
    n_mat = as_dense(gram)
    normal = inj.T @ n_mat @ inj
    try:
        y = sla.cho_solve(sla.cho_factor(0.5 * (normal + normal.T)), inj.T @ (n_mat @ w))
    except np.linalg.LinAlgError as e:
        raise RankDeficientError(f"normal equations of degree {k} are singular") from e
    return w_norm(gram, w - inj @ y)


# ==================== 系数 ====================

@dataclass
class CoefficientRow:
    level: int
    h: float
    delta: float
    eta: float
    mu: float
    converged: Dict[str, bool] = field(default_factory=dict)
    # ‖π_h‖_W 只记录, 不断言一致有界
    projection_norm: float = float("nan")
    eta_terms: Dict[str, float] = field(default_factory=dict)

    def row(self) -> list:
        return [self.level, self.h, self.delta, self.eta, self.mu, all(self.converged.values())]

    def to_dict(self) -> dict:
        return {"level": self.level, "h": self.h, "delta": self.delta, "eta": self.eta, "mu": self.mu,
                "converged": dict(self.converged), "projection_norm": self.projection_norm,
                "eta_terms": dict(self.eta_terms)}


@dataclass
class CoefficientReport:
    degree: int
    rows: List[CoefficientRow]
    orders: Dict[str, Optional[RateFit]]
    monotone: Dict[str, MonotoneFlag]

    def values(self, name: str) -> List[float]:
        return [getattr(r, name) for r in self.rows]

    def to_csv(self) -> dict:
        return {"header": COEFF_HEADER, "rows": [r.row() for r in self.rows]}

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "rows": [r.to_dict() for r in self.rows],
            "orders": {k: (v.to_dict() if v is not None else None) for k, v in self.orders.items()},
            "monotone": {k: v.to_dict() for k, v in self.monotone.items()},
        }


def _solution_maps(c: HilbertComplex, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """稠密 K 与 P_H (细网格, W^k → W^k)"""
    m = as_dense(c.gram_at(k))
    bold_k = sla.cho_solve(sla.cho_factor(intersection_gram(c, k)), m)
    h = harmonic_basis(c, k)
    p_h = h @ (h.T @ m)
    return bold_k - p_h, p_h


def _defect(c: HilbertComplex, morphism: ProlongationMorphism, j: int) -> np.ndarray:
    """I - i π 在细网格次数 j 上"""
    i_j = as_dense(morphism.inject[j])
    p_j = as_dense(morphism.project[j])
    n = c.dim(j)
    if i_j.shape[0] != n or p_j.shape[1] != n:
        raise DimensionMismatchError(n, i_j.shape[0], f"degree-{j} prolongation rows")
    return np.eye(n) - i_j @ p_j


def _w_norm_of(t: np.ndarray, m_in: np.ndarray, m_out: np.ndarray, seed: int) -> PowerEstimate:
    """‖T‖_{W→W}; 伴随 T* = M_in⁻¹ Tᵀ M_out"""
    adjoint = sla.cho_solve(sla.cho_factor(m_in), t.T @ m_out)
    return power_norm(lambda x: t @ x, m_in, apply_adjoint=lambda y: adjoint @ y,
                      seed=seed, raise_on_failure=False)


def measure_coefficients(fine: HilbertComplex, morphisms: Sequence[ProlongationMorphism], k: int,
                         seed: int = 0, window: int = 3) -> CoefficientReport:
    """
    每个粗层测 δ_h, η_h, μ_h 并拟合衰减阶

    Args:
        fine: 细网格复形 (K 在其上计算)
        morphisms: 各粗层到细网格的复合延拓态射, 由粗到细排列
        k: 次数
    Returns:
        CoefficientReport; 幂迭代不收敛时对应 converged 为 False, 不抛异常
    """
    fine.require(k)
    K, p_h = _solution_maps(fine, k)
    m = {j: as_dense(fine.gram_at(j)) for j in (k - 1, k, k + 1) if fine.in_range(j) and fine.dim(j)}
    # 名字 -> (定义域次数, 值域次数, 细网格上的复合映射)
    branches: Dict[str, Tuple[int, int, np.ndarray]] = {}
    if k + 1 in m:
        branches["dK"] = (k, k + 1, as_dense(fine.diff_at(k)) @ K)
        branches["dstarK_next"] = (k + 1, k, adjoint_differential(fine, k + 1) @ _solution_maps(fine, k + 1)[0])
    if k - 1 in m:
        branches["dstarK"] = (k, k - 1, adjoint_differential(fine, k) @ K)
        branches["dK_prev"] = (k - 1, k, as_dense(fine.diff_at(k - 1)) @ _solution_maps(fine, k - 1)[0])

    rows = []
    for level, morphism in enumerate(morphisms, start=1):
        q = _defect(fine, morphism, k)
        est_delta = _w_norm_of(q @ K, m[k], m[k], seed)
        est_mu = _w_norm_of(q @ p_h, m[k], m[k], seed)
        converged = {"delta": est_delta.converged, "mu": est_mu.converged}
        eta = 0.0
        eta_terms = {}
        for name, (j_in, j_out, t) in branches.items():
            est = _w_norm_of(_defect(fine, morphism, j_out) @ t, m[j_in], m[j_out], seed)
            converged[name] = est.converged
            eta_terms[name] = est.value
            eta = max(eta, est.value)
        for name, ok in converged.items():
            if not ok:
                logger.warning("[measure_coefficients] level %d: power iteration for %s did not converge",
                               level, name)
        coarse_c = whitney_complex(morphism.coarse, essential=morphism.essential)
        pi_norm = morphism.projection_norms(coarse_c, fine, degrees=[k])[k]
        rows.append(CoefficientRow(level=level, h=float(morphism.coarse.h), delta=est_delta.value,
                                   eta=eta, mu=est_mu.value, converged=converged, projection_norm=pi_norm,
                                   eta_terms=eta_terms))
        logger.info("[measure_coefficients] h=%.4g delta=%.3e eta=%.3e mu=%.3e |pi|=%.4f",
                    morphism.coarse.h, est_delta.value, eta, est_mu.value, pi_norm)

    hs = [r.h for r in rows]
    orders = {name: windowed_fit(hs, [getattr(r, name) for r in rows], window) for name in ("delta", "eta", "mu")}
    monotone = {name: monotone_flag([getattr(r, name) for r in rows]) for name in ("delta", "eta", "mu")}
    return CoefficientReport(degree=k, rows=rows, orders=orders, monotone=monotone)


def coefficient_family(family: str, levels: Sequence[int], refinements: int = 2, essential: bool = False,
                       curve: Optional[EllipseCurve] = None,
                       workers: int = 1) -> Tuple[HilbertComplex, List[ProlongationMorphism]]:
    """
    嵌套网格族: levels 必须逐层加倍, 细网格在最后一层之上再加密 refinements 次

    Returns:
        (细网格复形, 每个粗层到细网格的态射)
    """
    levels = list(levels)
    if any(b != 2 * a for a, b in zip(levels, levels[1:])):
        raise ValueError(f"coefficient levels must double from one level to the next, got {levels}")
    mesh = family_mesh(family, levels[0], curve)
    steps = []
    for _ in range(len(levels) - 1 + refinements):
        mesh, step = refine_uniform(mesh)
        steps.append(step)
    fine = whitney_complex(mesh, essential=essential, workers=workers)
    morphisms = []
    for j in range(len(levels)):
        morphism = steps[j]
        for step in steps[j + 1:]:
            morphism = compose(morphism, step)
        morphisms.append(morphism.essential_flavor() if essential else morphism)
    return fine, morphisms
