"""
变分犯罪 (variational crimes) 的构造

参考复形 V_ref 是 V_h 之上若干层一致加密; i_h 为加密延拓, π_h 为 de Rham 投影。
非酉的 i_h 通过扰动离散 Gram 得到:
    M_h = RᵀR,  M_ε = Rᵀ(I + εS)R,  S 对称且 ‖S‖₂ = 1
微分不动, 所以 i_h 仍是链映射。
J_h = i_h* i_h = M_ε⁻¹ (i_hᵀ M_ref i_h)。
"""

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from derham.mesh import EllipseCurve, family_mesh
from derham.refine import ProlongationMorphism, refine_levels
from derham.whitney import whitney_complex
from hilbert.complex import HilbertComplex
from hilbert.hodge import harmonic_basis, perp_basis
from hilbert.subspaces import as_dense
from utils.errors import CrimeSynthesisError
from utils.utils import get_logger, make_rng, w_norm

logger = get_logger(__name__)


@dataclass(eq=False)
class CrimeSetup:
    """
    discrete: 带犯罪的离散复形 (Gram 为 M_ε)
    base: 未扰动的离散复形 (Gram 为 M_h)
    modified: Gram 为 i_hᵀ M_ref i_h 的复形, 即修正问题所在的复形
    """
    discrete: HilbertComplex
    base: HilbertComplex
    reference: HilbertComplex
    modified: HilbertComplex
    inject: Dict[int, sp.csr_matrix]
    project: Dict[int, sp.csr_matrix]
    J: Dict[int, np.ndarray]
    magnitudes: Dict[int, float]
    epsilon: float
    perturbations: Dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def crime_magnitude(self) -> float:
        """max_k ‖I - J_h^k‖ (离散 W-范数)"""
        return max(self.magnitudes.values()) if self.magnitudes else 0.0

    @property
    def h(self) -> float:
        real = self.base.realization
        return float(real.mesh.h) if real is not None else float("nan")

    def i_adjoint(self, k: int, f_ref: np.ndarray) -> np.ndarray:
        """i_h* f = M_ε⁻¹ i_hᵀ M_ref f"""
        b = self.inject[k].T @ (self.reference.gram_at(k) @ f_ref)
        return sla.cho_solve(sla.cho_factor(as_dense(self.discrete.gram_at(k))), b)

    def consistency_violation(self, k: int) -> float:
        """max |⟨J u, v⟩_h - ⟨i u, i v⟩_ref| / scale, 遍历基对"""
        lhs = as_dense(self.discrete.gram_at(k)) @ self.J[k]
        rhs = as_dense(self.modified.gram_at(k))
        scale = max(np.abs(rhs).max(initial=0.0), np.finfo(float).tiny)
        return float(np.abs(lhs - rhs).max(initial=0.0) / scale)

    def morphism_violation(self) -> float:
        worst = 0.0
        for k in self.inject:
            if k + 1 in self.inject:
                lhs = self.reference.diff_at(k) @ self.inject[k]
                rhs = self.inject[k + 1] @ self.discrete.diff_at(k)
                diff = sp.csr_matrix(lhs - rhs)
                worst = max(worst, float(abs(diff).max()) if diff.nnz else 0.0)
        return worst

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "h": self.h, "crime_magnitude": self.crime_magnitude,
                "magnitudes": {str(k): v for k, v in self.magnitudes.items()}}


# ==================== 构造 ====================

def build_nested_pair(family: str, n: int, levels_up: int = 2, essential: bool = False,
                      curve: Optional[EllipseCurve] = None,
                      workers: int = 1) -> Tuple[HilbertComplex, HilbertComplex, ProlongationMorphism]:
    """
    离散复形与其上 levels_up 层加密的参考复形

    Returns:
        (V_h, V_ref, 复合延拓态射)
    """
    if levels_up < 1:
        raise ValueError("reference complex needs at least one refinement level")
    coarse = family_mesh(family, n, curve)
    fine, morphism = refine_levels(coarse, levels_up, essential=essential)
    v_h = whitney_complex(coarse, essential=essential, workers=workers)
    v_ref = whitney_complex(fine, essential=essential, workers=workers)
    return v_h, v_ref, morphism


def _unit_symmetric(n: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.standard_normal((n, n))
    s = 0.5 * (a + a.T)
    norm = float(np.abs(np.linalg.eigvalsh(s)).max()) if n else 1.0
    return s / norm if norm > 0.0 else s


def synth_crime(v_h: HilbertComplex, v_ref: HilbertComplex, morphism: ProlongationMorphism,
                epsilon: float, seed: int = 0) -> CrimeSetup:
    """
    扰动 V_h 的 Gram 得到非酉包含

    Args:
        v_h: 离散复形 (i_h 为真正的子复形包含)
        v_ref: 参考复形
        morphism: 延拓态射 (i_h, π_h)
        epsilon: 扰动幅度 >= 0
        seed: S 的随机种子, 次数 k 使用 seed + k
    Returns:
        CrimeSetup
    """
    if epsilon < 0.0:
        raise ValueError("epsilon must be non-negative")
    grams: Dict[int, np.ndarray] = {}
    modified: Dict[int, np.ndarray] = {}
    perturbations: Dict[int, np.ndarray] = {}
    J: Dict[int, np.ndarray] = {}
    magnitudes: Dict[int, float] = {}
    for k in v_h.degree_range():
        m_h = as_dense(v_h.gram_at(k))
        n = m_h.shape[0]
        s = _unit_symmetric(n, make_rng(seed + k))
        lam_min = float(np.linalg.eigvalsh(s).min()) if n else 0.0
        if n and 1.0 + epsilon * lam_min <= 0.0:
            raise CrimeSynthesisError(k, 1.0 + epsilon * lam_min)
        r = sla.cholesky(m_h, lower=False) if n else m_h
        m_eps = r.T @ (np.eye(n) + epsilon * s) @ r
        m_eps = 0.5 * (m_eps + m_eps.T)
        i_k = morphism.inject[k]
        m_0 = as_dense(i_k.T @ v_ref.gram_at(k) @ i_k)
        m_0 = 0.5 * (m_0 + m_0.T)
        grams[k], modified[k], perturbations[k] = m_eps, m_0, s
        J[k] = sla.cho_solve(sla.cho_factor(m_eps), m_0) if n else np.zeros((0, 0))
        if n:
            vals = sla.eigh(m_eps - m_0, m_eps, eigvals_only=True)
            magnitudes[k] = float(np.abs(vals).max())
        else:
            magnitudes[k] = 0.0

    discrete = v_h.with_grams({k: sp.csr_matrix(g) for k, g in grams.items()})
    modified_c = v_h.with_grams({k: sp.csr_matrix(g) for k, g in modified.items()})
    setup = CrimeSetup(discrete=discrete, base=v_h, reference=v_ref, modified=modified_c,
                       inject=dict(morphism.inject), project=dict(morphism.project), J=J,
                       magnitudes=magnitudes, epsilon=float(epsilon), perturbations=perturbations)
    logger.debug("[synth_crime] eps=%g |I - J| = %.3e", epsilon, setup.crime_magnitude)
    return setup


# ==================== 修正 Hodge 分解 ====================

@dataclass
class ModifiedHarmonicSpace:
    """H′_h^k = {z ∈ Z_h^k : i_h z ⊥ i_h B_h^k}; 基在 i_hᵀM_ref i_h 下正交归一"""
    degree: int
    harmonic: np.ndarray
    perp: np.ndarray

    @property
    def dim(self) -> int:
        return self.harmonic.shape[1]


def modified_harmonic(setup: CrimeSetup, k: int) -> ModifiedHarmonicSpace:
    c = setup.modified
    return ModifiedHarmonicSpace(degree=k, harmonic=harmonic_basis(c, k), perp=perp_basis(c, k))


# ==================== 数据投影 ====================

@dataclass
class ProjectedData:
    f_h: np.ndarray
    mode: str
    discrepancy: Optional[float] = None


def project_data(setup: CrimeSetup, k: int, f_ref: np.ndarray, mode: str = "adjoint",
                 discrepancy: bool = False) -> ProjectedData:
    """
    f_h = i_h* f (adjoint) 或 π_h f (interpolation)

    Args:
        discrepancy: 同时给出 ‖π_h f - i_h* f‖_h
    """
    f_ref = setup.reference.check_vector(k, f_ref, "reference data")
    adjoint = setup.i_adjoint(k, f_ref)
    interp = setup.project[k] @ f_ref
    if mode == "adjoint":
        f_h = adjoint
    elif mode == "interpolation":
        f_h = np.asarray(interp, dtype=float)
    else:
        raise ValueError(f"unknown projection mode '{mode}' (expected 'adjoint' or 'interpolation')")
    gap = w_norm(setup.discrete.gram_at(k), interp - adjoint) if discrepancy else None
    return ProjectedData(f_h=f_h, mode=mode, discrepancy=gap)
