"""
带犯罪的离散问题、修正问题、子复形问题, 以及误差间隙 (gap) 的测量
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy.linalg as sla

from crimes.setup import CrimeSetup, project_data, synth_crime
from derham.refine import ProlongationMorphism
from hilbert.complex import HilbertComplex
from hilbert.subspaces import as_dense, null_basis, w_orthonormalize
from lab.coefficients import best_approx_error
from lab.rates import fit_loglog_slope
from mixed.solver import MixedSolution, data_norm, solve_mixed_linear
from semilinear.hammerstein import SemilinearSolution, SolverOptions, solve_hammerstein
from semilinear.nonlinearity import Nonlinearity, NonlinearityKind, custom, evaluate_F, jacobian_F
from utils.utils import get_logger, make_rng, w_norm

logger = get_logger(__name__)

PROXY_FLAG = "reference complex is a fine-mesh proxy for the continuum solution"


def _is_zero(F: Optional[Nonlinearity]) -> bool:
    return F is None or F.kind == NonlinearityKind.ZERO


# ==================== 离散非线性项 ====================

def optimal_nonlinearity(setup: CrimeSetup, k: int, F: Nonlinearity) -> Nonlinearity:
    """F_h = i_h* F i_h: 载荷 i_hᵀ F_ref(i_h u), Jacobian i_hᵀ J_ref i_h"""
    i_k = setup.inject[k]
    ref = setup.reference

    def load(u):
        return i_k.T @ evaluate_F(F, ref, k, i_k @ u)

    def jacobian(u):
        return (i_k.T @ jacobian_F(F, ref, k, i_k @ u) @ i_k).toarray()

    return custom(load, jacobian, label=f"i*({F.label})i")


def projected_nonlinearity(setup: CrimeSetup, k: int, F: Nonlinearity) -> Nonlinearity:
    """F_h = Π_h F i_h: 载荷 M_ε π_h M_ref⁻¹ F_ref(i_h u)"""
    i_k, pi_k = setup.inject[k], setup.project[k]
    ref = setup.reference
    m_eps = as_dense(setup.discrete.gram_at(k))
    ref_factor = sla.cho_factor(as_dense(ref.gram_at(k)))

    def load(u):
        coeffs = sla.cho_solve(ref_factor, evaluate_F(F, ref, k, i_k @ u))
        return m_eps @ (pi_k @ coeffs)

    def jacobian(u):
        j_ref = jacobian_F(F, ref, k, i_k @ u).toarray()
        return m_eps @ (pi_k @ sla.cho_solve(ref_factor, j_ref @ i_k.toarray()))

    return custom(load, jacobian, label=f"pi({F.label})i")


# ==================== 求解 ====================

def solve_generalized(setup: CrimeSetup, k: int, f_h: np.ndarray, F_h: Optional[Nonlinearity] = None,
                      options: Optional[SolverOptions] = None) -> MixedSolution:
    """
    V_h 上 (犯罪的 Gram) 的离散混合问题, 调和空间 H_h^k

    Args:
        f_h: 离散 W^k 系数
        F_h: 离散非线性项; None 或 zero 时为线性问题
    """
    c = setup.discrete
    if _is_zero(F_h):
        return solve_mixed_linear(c, k, f_h)
    sol, _ = solve_hammerstein(c, k, f_h, F_h, options)
    return sol.mixed


def _modified_load(setup: CrimeSetup, k: int, f_ref: np.ndarray) -> np.ndarray:
    """⟨i_h* f, v⟩_h = (i_hᵀ M_ref f)ᵀ v"""
    f_ref = setup.reference.check_vector(k, f_ref, "reference data")
    return setup.inject[k].T @ (setup.reference.gram_at(k) @ f_ref)


def solve_modified(setup: CrimeSetup, k: int, f_ref: np.ndarray, F: Optional[Nonlinearity] = None,
                   options: Optional[SolverOptions] = None) -> MixedSolution:
    """
    J_h 加权的修正问题: Gram i_hᵀ M_ref i_h, 右端 ⟨i_h* f, v⟩_h, 调和空间 H′_h^k
    """
    c = setup.modified
    load = _modified_load(setup, k, f_ref)
    if _is_zero(F):
        return solve_mixed_linear(c, k, load, load=True)
    sol, _ = solve_hammerstein(c, k, load, optimal_nonlinearity(setup, k, F), options, load=True)
    return sol.mixed


def subcomplex_solve(setup: CrimeSetup, k: int, f_ref: np.ndarray) -> MixedSolution:
    """
    直接在 i_h V_h ⊂ V_ref 上用参考内积组装并稠密求解, 再经 π_h 映回 V_h 坐标

    作为 solve_modified 的独立对照: 所有块都由 D_ref i_h 与 M_ref 构成。
    """
    ref = setup.reference
    i_k = as_dense(setup.inject[k])
    m = as_dense(ref.gram_at(k))
    m_next = as_dense(ref.gram_at(k + 1))
    d_i = as_dense(ref.diff_at(k)) @ i_k
    gram = i_k.T @ m @ i_k
    stiff = d_i.T @ m_next @ d_i
    if k - 1 in setup.inject:
        i_prev = as_dense(setup.inject[k - 1])
        g_i = as_dense(ref.diff_at(k - 1)) @ i_prev
        m0 = i_prev.T @ as_dense(ref.gram_at(k - 1)) @ i_prev
        coupling = g_i.T @ m @ i_k
    else:
        g_i = np.zeros((i_k.shape[0], 0))
        m0 = np.zeros((0, 0))
        coupling = np.zeros((0, i_k.shape[1]))

    # i_h V_h 内的调和空间
    z = null_basis(np.vstack([d_i, g_i.T @ m @ i_k]))
    h = w_orthonormalize(z, gram)
    mh = gram @ h
    ns, nu, npp = m0.shape[0], gram.shape[0], h.shape[1]
    a = np.zeros((ns + nu + npp, ns + nu + npp))
    a[:ns, :ns] = m0
    a[:ns, ns:ns + nu] = -coupling
    a[ns:ns + nu, :ns] = coupling.T
    a[ns:ns + nu, ns:ns + nu] = stiff
    a[ns:ns + nu, ns + nu:] = mh
    a[ns + nu:, ns:ns + nu] = mh.T
    rhs = np.concatenate([np.zeros(ns), i_k.T @ (m @ f_ref), np.zeros(npp)])
    x = np.linalg.solve(a, rhs)
    sigma, u, coeffs = x[:ns], x[ns:ns + nu], x[ns + nu:]

    # 经参考空间映回: π_h (i_h x) = x
    pi_k = setup.project[k]
    u_h = pi_k @ (i_k @ u)
    p_h = pi_k @ (i_k @ (h @ coeffs))
    sigma_h = setup.project[k - 1] @ (as_dense(setup.inject[k - 1]) @ sigma) if ns else sigma
    residual = float(np.abs(a @ x - rhs).max(initial=0.0) / max(np.abs(rhs).max(initial=0.0), 1e-300))
    return MixedSolution(degree=k, sigma=np.asarray(sigma_h, dtype=float), u=np.asarray(u_h, dtype=float),
                         p_coeffs=coeffs, p=np.asarray(p_h, dtype=float), residual_norm=residual,
                         rhs_norm=w_norm(ref.gram_at(k), f_ref), method="dense")


# ==================== 间隙 ====================

def triple_norm(c: HilbertComplex, k: int, sigma: np.ndarray, u: np.ndarray, p: np.ndarray) -> float:
    """‖σ‖_V + ‖u‖_V + ‖p‖_W"""
    total = w_norm(c.graph_gram(k), u) + w_norm(c.gram_at(k), p)
    if sigma.size:
        total += w_norm(c.graph_gram(k - 1), sigma)
    return float(total)


def _difference(c: HilbertComplex, k: int, a: MixedSolution, b: MixedSolution) -> float:
    return triple_norm(c, k, a.sigma - b.sigma, a.u - b.u, a.p - b.p)


@dataclass
class GapReport:
    epsilon: float
    h: float
    gap: float
    bound_f_term: float
    bound_J_term: float
    ratio: float

    def row(self) -> list:
        return [self.epsilon, self.h, self.gap, self.bound_f_term, self.bound_J_term, self.ratio]

    def to_dict(self) -> dict:
        return dict(zip(GAP_HEADER, self.row()))


GAP_HEADER = ["epsilon", "h", "gap", "bound_f_term", "bound_J_term", "ratio"]


def crime_gap(setup: CrimeSetup, k: int, f_ref: np.ndarray, f_h: Optional[np.ndarray] = None,
              F: Optional[Nonlinearity] = None, F_h: Optional[Nonlinearity] = None,
              options: Optional[SolverOptions] = None) -> GapReport:
    """
    ‖σ_h-σ′_h‖_{V_h} + ‖u_h-u′_h‖_{V_h} + ‖p_h-p′_h‖_h 与界的两项 ‖f_h - i_h*f‖_h, ‖I-J_h‖‖f‖

    Args:
        f_h: 离散数据, 默认 i_h* f
        F: 参考非线性项 (修正问题使用 i_h* F i_h)
        F_h: 离散非线性项, 默认 i_h* F i_h
    """
    adjoint = setup.i_adjoint(k, f_ref)
    f_h = adjoint if f_h is None else f_h
    if not _is_zero(F) and F_h is None:
        F_h = optimal_nonlinearity(setup, k, F)
    generalized = solve_generalized(setup, k, f_h, F_h, options)
    modified = solve_modified(setup, k, f_ref, F, options)
    gap = _difference(setup.discrete, k, generalized, modified)
    f_term = w_norm(setup.discrete.gram_at(k), f_h - adjoint)
    j_term = setup.magnitudes[k] * w_norm(setup.reference.gram_at(k), f_ref)
    denom = f_term + j_term
    ratio = gap / denom if denom > 0.0 else 0.0
    return GapReport(epsilon=setup.epsilon, h=setup.h, gap=gap, bound_f_term=f_term, bound_J_term=j_term,
                     ratio=float(ratio))


@dataclass
class CrimeSweep:
    rows: List[GapReport]
    exponent: float
    stderr: float

    def to_csv(self) -> dict:
        return {"header": GAP_HEADER, "rows": [r.row() for r in self.rows]}

    def to_dict(self) -> dict:
        return {"exponent": self.exponent, "stderr": self.stderr, "rows": [r.to_dict() for r in self.rows]}


def crime_sweep(v_h: HilbertComplex, v_ref: HilbertComplex, morphism: ProlongationMorphism, k: int,
                f_ref: np.ndarray, epsilons: Sequence[float], seed: int = 0, F: Optional[Nonlinearity] = None,
                options: Optional[SolverOptions] = None, workers: int = 1) -> CrimeSweep:
    """
    对每个 ε 合成犯罪并测量间隙, 拟合 log gap 对 log ε 的斜率

    扫描点相互独立, workers > 1 时并行计算, 结果按 ε 的给定顺序排列
    """
    def point(eps: float) -> GapReport:
        setup = synth_crime(v_h, v_ref, morphism, eps, seed)
        return crime_gap(setup, k, f_ref, F=F, options=options)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(point, epsilons))
    else:
        rows = [point(eps) for eps in epsilons]
    positive = [r for r in rows if r.epsilon > 0.0 and r.gap > 0.0]
    if len(positive) >= 2:
        fit = fit_loglog_slope([r.epsilon for r in positive], [r.gap for r in positive])
        exponent, stderr = fit.slope, fit.stderr
    else:
        exponent, stderr = float("nan"), float("nan")
    logger.info("[crime_sweep] k=%d exponent %.4f +- %.2e over %d points", k, exponent, stderr, len(rows))
    return CrimeSweep(rows=rows, exponent=exponent, stderr=stderr)


@dataclass
class PerturbationRow:
    delta: float
    gap: float
    constant: float


def data_perturbation_sweep(setup: CrimeSetup, k: int, f_ref: np.ndarray, deltas: Sequence[float],
                            seed: int = 0) -> List[PerturbationRow]:
    """f_h = i_h* f + δ g (g 为 ‖g‖_h = 1 的固定随机方向), 记录 gap 与 gap/δ"""
    g = make_rng(seed).standard_normal(setup.discrete.dim(k))
    g = g / w_norm(setup.discrete.gram_at(k), g)
    base = setup.i_adjoint(k, f_ref)
    rows = []
    for delta in deltas:
        report = crime_gap(setup, k, f_ref, f_h=base + delta * g)
        rows.append(PerturbationRow(delta=float(delta), gap=report.gap,
                                    constant=report.gap / delta if delta > 0.0 else 0.0))
    return rows


# ==================== 半线性 ====================

@dataclass
class CrimeSolveReport:
    """
    total: 参考解与 i_h(离散解) 的三元范数误差 (参考范数)
    modified_error: 参考解与 i_h(修正解) 的误差
    gap: 离散解与修正解之差 (离散范数)
    best_approx: ‖**u** - P_{V_h} **u**‖_V, V-正交投影到 i_h V_h 的距离
    """
    choice: str
    solution: SemilinearSolution
    reference: SemilinearSolution
    total: float
    modified_error: float
    gap: float
    best_approx: float
    data_discrepancy: float
    F_discrepancy: float
    flags: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "choice": self.choice,
            "total": self.total,
            "modified_error": self.modified_error,
            "gap": self.gap,
            "best_approx": self.best_approx,
            "data_discrepancy": self.data_discrepancy,
            "F_discrepancy": self.F_discrepancy,
            "flags": list(self.flags),
        }


def _lift_error(setup: CrimeSetup, k: int, ref: MixedSolution, sol: MixedSolution) -> float:
    c = setup.reference
    sigma = ref.sigma - setup.inject[k - 1] @ sol.sigma if sol.sigma.size else ref.sigma
    return triple_norm(c, k, sigma, ref.u - setup.inject[k] @ sol.u, ref.p - setup.inject[k] @ sol.p)


def semilinear_crime_solve(setup: CrimeSetup, k: int, f_ref: np.ndarray, F: Nonlinearity,
                           choice: str = "optimal", options: Optional[SolverOptions] = None) -> CrimeSolveReport:
    """
    按 optimal (f_h = i_h*f, F_h = i_h*F i_h) 或 projected (f_h = Π_h f, F_h = Π_h F i_h) 构造离散问题,
    求解并与参考复形上的半线性解比较
    """
    options = options or SolverOptions()
    if choice == "optimal":
        f_h = setup.i_adjoint(k, f_ref)
        F_h = optimal_nonlinearity(setup, k, F)
    elif choice == "projected":
        f_h = project_data(setup, k, f_ref, mode="interpolation").f_h
        F_h = projected_nonlinearity(setup, k, F)
    else:
        raise ValueError(f"unknown data choice '{choice}' (expected 'optimal' or 'projected')")

    discrete, _ = solve_hammerstein(setup.discrete, k, f_h, F_h, options)
    reference, _ = solve_hammerstein(setup.reference, k, f_ref, F, options)
    modified = solve_modified(setup, k, f_ref, F, options)

    total = _lift_error(setup, k, reference.mixed, discrete.mixed)
    modified_error = _lift_error(setup, k, reference.mixed, modified)
    gap = _difference(setup.discrete, k, discrete.mixed, modified)
    best = best_approx_error(setup.reference, setup.inject[k], reference.bold_u, k, norm="V")

    adjoint = setup.i_adjoint(k, f_ref)
    data_gap = w_norm(setup.discrete.gram_at(k), f_h - adjoint)
    optimal = optimal_nonlinearity(setup, k, F)
    load_gap = evaluate_F(F_h, setup.discrete, k, discrete.bold_u) - evaluate_F(optimal, setup.discrete, k,
                                                                                discrete.bold_u)
    F_gap = data_norm(setup.discrete, k, load_gap, load=True)
    flags = [PROXY_FLAG] + list(discrete.flags)
    logger.info("[semilinear_crime_solve] %s: total %.3e modified %.3e gap %.3e best %.3e",
                choice, total, modified_error, gap, best)
    return CrimeSolveReport(choice=choice, solution=discrete, reference=reference, total=total,
                            modified_error=modified_error, gap=gap, best_approx=best,
                            data_discrepancy=data_gap, F_discrepancy=F_gap, flags=flags)


@dataclass
class TriangleDecomposition:
    total: float
    modified_term: float
    gap_term: float
    holds: bool
    flags: List[str] = field(default_factory=lambda: [PROXY_FLAG])

    def to_dict(self) -> Dict[str, object]:
        return {"total": self.total, "modified_term": self.modified_term, "gap_term": self.gap_term,
                "holds": self.holds, "flags": list(self.flags)}


def triangle_decomposition(setup: CrimeSetup, k: int, f_ref: np.ndarray,
                           f_h: Optional[np.ndarray] = None) -> TriangleDecomposition:
    """
    ‖**u**_ref - i_h **u**_h‖ <= ‖**u**_ref - i_h **u**′_h‖ + ‖i_h(**u**_h - **u**′_h)‖, 参考 W-范数
    """
    f_h = setup.i_adjoint(k, f_ref) if f_h is None else f_h
    reference = solve_mixed_linear(setup.reference, k, f_ref)
    generalized = solve_generalized(setup, k, f_h)
    modified = solve_modified(setup, k, f_ref)
    i_k = setup.inject[k]
    m = setup.reference.gram_at(k)
    total = w_norm(m, reference.bold_u - i_k @ generalized.bold_u)
    modified_term = w_norm(m, reference.bold_u - i_k @ modified.bold_u)
    gap_term = w_norm(m, i_k @ (generalized.bold_u - modified.bold_u))
    holds = total <= (modified_term + gap_term) * (1.0 + 1e-12) + 1e-14
    return TriangleDecomposition(total=total, modified_term=modified_term, gap_term=gap_term, holds=bool(holds))
