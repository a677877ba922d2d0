"""
Hodge 分解、调和空间、伴随微分与 Poincaré 常数
"""

import threading
import weakref
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from hilbert.complex import DENSE_LIMIT, HilbertComplex
from hilbert.subspaces import (
    as_dense,
    matrix_rank,
    null_basis,
    range_basis,
    sparse_null_basis,
    w_orthonormalize,
)
from utils.errors import DegreeOutOfRangeError, EmptyPerpSpaceError
from utils.utils import get_logger, w_norm

logger = get_logger(__name__)

_harmonic_cache: "weakref.WeakKeyDictionary[HilbertComplex, Dict[int, np.ndarray]]" = weakref.WeakKeyDictionary()
_cache_lock = threading.Lock()


# ==================== 基 ====================

def cocycle_basis(c: HilbertComplex, k: int) -> np.ndarray:
    """Z^k = ker D^k, W-正交基"""
    c.require(k)
    return w_orthonormalize(null_basis(c.diff_at(k)), c.gram_at(k))


def coboundary_basis(c: HilbertComplex, k: int) -> np.ndarray:
    """B^k = range D^{k-1}, W-正交基"""
    c.require(k)
    return w_orthonormalize(range_basis(c.diff_at(k - 1)), c.gram_at(k))


def perp_basis(c: HilbertComplex, k: int) -> np.ndarray:
    """Z^{k⊥} = M^{-1} range (D^k)ᵀ, W-正交基"""
    c.require(k)
    return w_orthonormalize(_perp_spanning_set(c, k), c.gram_at(k))


def _perp_spanning_set(c: HilbertComplex, k: int) -> np.ndarray:
    q = range_basis(c.diff_at(k).T)
    if q.shape[1] == 0:
        return q
    m = as_dense(c.gram_at(k))
    return sla.cho_solve(sla.cho_factor(m), q)


def harmonic_basis(c: HilbertComplex, k: int, dense_limit: int = DENSE_LIMIT) -> np.ndarray:
    """
    H^k = ker D^k ∩ (range D^{k-1})^{⊥_W} 的 W-正交基

    Args:
        c: 复形
        k: 次数
        dense_limit: 维数超过该值时走稀疏 Lanczos
    Returns:
        H: 列为基, HᵀMH = I
    """
    c.require(k)
    with _cache_lock:
        cached = _harmonic_cache.get(c, {}).get((k, dense_limit))
    if cached is not None:
        return cached

    d = c.diff_at(k)
    g = c.diff_at(k - 1)
    m = c.gram_at(k)
    n = c.dim(k)
    gtm = (g.T @ m).tocsr()

    if n <= dense_limit:
        z = null_basis(d)
        constraint = as_dense(gtm) @ z
        if constraint.shape[0] == 0:
            raw = z
        else:
            raw = z @ null_basis(constraint)
    else:
        blocks = []
        for block in (d, gtm):
            if block.shape[0] and block.nnz:
                blocks.append(block / abs(block).max())
        if blocks:
            raw = sparse_null_basis(sp.vstack(blocks).tocsr())
        else:
            raw = np.eye(n)

    basis = w_orthonormalize(raw, m)
    logger.debug("[harmonic_basis] k=%d dim W=%d dim H=%d", k, n, basis.shape[1])
    with _cache_lock:
        _harmonic_cache.setdefault(c, {})[(k, dense_limit)] = basis
    return basis


def harmonic_projector_apply(c: HilbertComplex, k: int, v: np.ndarray) -> np.ndarray:
    """P_H v = H Hᵀ M v"""
    h = harmonic_basis(c, k)
    return h @ (h.T @ (c.gram_at(k) @ v))


def betti_numbers(c: HilbertComplex) -> List[int]:
    return [harmonic_basis(c, k).shape[1] for k in c.degree_range()]


# ==================== Hodge 分解 ====================

@dataclass
class HodgeDecomposition:
    """v = b + h + z, 三部分两两 W-正交"""
    degree: int
    coboundary_part: np.ndarray
    harmonic_part: np.ndarray
    perp_part: np.ndarray
    harmonic_basis: np.ndarray
    coboundary_basis: np.ndarray = field(repr=False)
    gram: sp.csr_matrix = field(repr=False)

    def apply_P_B(self, x: np.ndarray) -> np.ndarray:
        q = self.coboundary_basis
        return q @ (q.T @ (self.gram @ x))

    def apply_P_H(self, x: np.ndarray) -> np.ndarray:
        q = self.harmonic_basis
        return q @ (q.T @ (self.gram @ x))

    def apply_P_perp(self, x: np.ndarray) -> np.ndarray:
        return x - self.apply_P_B(x) - self.apply_P_H(x)

    def projectors(self) -> Dict[str, np.ndarray]:
        """稠密投影矩阵, 仅在需要时构造"""
        m = as_dense(self.gram)
        p_b = self.coboundary_basis @ (self.coboundary_basis.T @ m)
        p_h = self.harmonic_basis @ (self.harmonic_basis.T @ m)
        return {"P_B": p_b, "P_H": p_h, "P_perp": np.eye(m.shape[0]) - p_b - p_h}

    @property
    def dims(self) -> Dict[str, int]:
        n = self.gram.shape[0]
        b = self.coboundary_basis.shape[1]
        h = self.harmonic_basis.shape[1]
        return {"B": b, "H": h, "perp": n - b - h}

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "coboundary_part": self.coboundary_part.tolist(),
            "harmonic_part": self.harmonic_part.tolist(),
            "perp_part": self.perp_part.tolist(),
            "dims": self.dims,
        }


def hodge_decompose(c: HilbertComplex, k: int, v: np.ndarray) -> HodgeDecomposition:
    c.require(k)
    v = c.check_vector(k, v)
    m = c.gram_at(k)
    qb = coboundary_basis(c, k)
    h = harmonic_basis(c, k)
    b_part = qb @ (qb.T @ (m @ v))
    h_part = h @ (h.T @ (m @ v))
    z_part = v - b_part - h_part
    return HodgeDecomposition(
        degree=k,
        coboundary_part=b_part,
        harmonic_part=h_part,
        perp_part=z_part,
        harmonic_basis=h,
        coboundary_basis=qb,
        gram=m,
    )


# ==================== 伴随 ====================

def adjoint_differential(c: HilbertComplex, k: int) -> np.ndarray:
    """
    D*_k = (M^{k-1})^{-1} (D^{k-1})ᵀ M^k, 用 Cholesky 求解而非显式求逆
    """
    if not (c.in_range(k) and c.in_range(k - 1)):
        raise DegreeOutOfRangeError(k, c.k_min + 1, c.k_max)
    m_prev = as_dense(c.gram_at(k - 1))
    rhs = as_dense(c.diff_at(k - 1).T @ c.gram_at(k))
    return sla.cho_solve(sla.cho_factor(m_prev), rhs)


@dataclass
class DualComplexView:
    """对偶复形: W_k* = W^k, 微分为 d*_k"""
    complex: HilbertComplex
    adjoints: Dict[int, np.ndarray]

    def adjoint_identity_violation(self, k: int) -> float:
        """max |⟨D^{k-1}u, v⟩ - ⟨u, D*_k v⟩| / scale, 遍历所有基对"""
        c = self.complex
        d = as_dense(c.diff_at(k - 1))
        lhs = d.T @ as_dense(c.gram_at(k))
        rhs = as_dense(c.gram_at(k - 1)) @ self.adjoints[k]
        scale = max(np.abs(lhs).max(initial=0.0), np.finfo(float).tiny)
        return float(np.abs(lhs - rhs).max(initial=0.0) / scale)

    def cochain_violation(self, k: int) -> float:
        """|D*_k D*_{k+1}|, 相对于两者范数之积"""
        a, b = self.adjoints[k], self.adjoints[k + 1]
        scale = max(np.linalg.norm(a) * np.linalg.norm(b), np.finfo(float).tiny)
        return float(np.abs(a @ b).max(initial=0.0) / scale)


def dual_complex(c: HilbertComplex) -> DualComplexView:
    adjoints = {k: adjoint_differential(c, k) for k in range(c.k_min + 1, c.k_max + 1)}
    return DualComplexView(complex=c, adjoints=adjoints)


# ==================== Poincaré ====================

@dataclass
class PoincareData:
    degree: int
    constant: float
    witness: np.ndarray

    def to_dict(self) -> dict:
        return {"degree": self.degree, "constant": self.constant, "witness": self.witness.tolist()}


def poincare_constant(c: HilbertComplex, k: int) -> PoincareData:
    """
    c_P = sup_{v ∈ Z^{k⊥}} ‖v‖_V / ‖D^k v‖_W

    在 Z^{k⊥} 的基 Y 上: c_P² = 1 + 1/λ_min(YᵀDᵀM'DY, YᵀMY)
    """
    c.require(k)
    y = _perp_spanning_set(c, k)
    if y.shape[1] == 0:
        raise EmptyPerpSpaceError(k)
    d = as_dense(c.diff_at(k))
    m = as_dense(c.gram_at(k))
    m_next = as_dense(c.gram_at(k + 1))
    dy = d @ y
    stiff = dy.T @ m_next @ dy
    mass = y.T @ m @ y
    vals, vecs = sla.eigh(0.5 * (stiff + stiff.T), 0.5 * (mass + mass.T))
    lam = float(vals[0])
    constant = float(np.sqrt(1.0 + 1.0 / lam))
    witness = y @ vecs[:, 0]
    witness = witness / w_norm(m, witness)
    logger.debug("[poincare_constant] k=%d c_P=%.6g", k, constant)
    return PoincareData(degree=k, constant=constant, witness=witness)


def poincare_ratio(c: HilbertComplex, k: int, v: np.ndarray) -> Optional[float]:
    """‖v‖_V / ‖D^k v‖_W; D^k v = 0 时返回 None"""
    dv = c.diff_at(k) @ v
    denom = w_norm(c.gram_at(k + 1), dv)
    if denom == 0.0:
        return None
    return w_norm(c.graph_gram(k), v) / denom
