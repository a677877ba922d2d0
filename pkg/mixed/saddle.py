"""
混合 Hodge-Laplace 鞍点系统

未知量顺序 (σ, u, c), p = H c。按原式存储:
    [ M⁰      -GᵀM    0  ] [σ]   [0]
    [ MG      DᵀM⁺D   MH ] [u] = [b]
    [ 0       HᵀM     0  ] [c]   [0]
其中 G = D^{k-1}, M⁰ = M^{k-1}, M = M^k, D = D^k, M⁺ = M^{k+1}, b = M f (或直接给出的载荷)。
分解与 MINRES 使用第一行取负后的对称形式。
"""

import threading
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import minres, splu

from hilbert.complex import HilbertComplex
from hilbert.hodge import harmonic_basis
from utils.errors import ConvergenceError, FactorizationError
from utils.utils import get_logger

logger = get_logger(__name__)

MINRES_RTOL = 1e-12
# 超过该维数时失败诊断不再估计条件数
COND_ESTIMATE_LIMIT = 2000


def assemble_blocks(blocks: Dict[Tuple[int, int], object], sizes: Tuple[int, ...]) -> sp.csr_matrix:
    """按块偏移拼接; 允许零维块"""
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rows, cols, vals = [], [], []
    for (i, j), blk in blocks.items():
        coo = sp.coo_matrix(blk)
        if coo.shape != (sizes[i], sizes[j]):
            raise ValueError(f"block ({i}, {j}) has shape {coo.shape}, expected {(sizes[i], sizes[j])}")
        rows.append(coo.row + offsets[i])
        cols.append(coo.col + offsets[j])
        vals.append(coo.data)
    n = int(offsets[-1])
    if not rows:
        return sp.csr_matrix((n, n))
    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()


@dataclass(eq=False)
class SaddleSystem:
    """
    混合问题的分块矩阵

    matrix 为原式 (第一行 ⟨σ,τ⟩ - ⟨u,dτ⟩), symmetric 为第一行取负后的对称矩阵
    """
    complex: HilbertComplex
    degree: int
    matrix: sp.csr_matrix
    symmetric: sp.csr_matrix
    harmonic: np.ndarray
    sizes: Tuple[int, int, int]
    _factor: object = field(default=None, init=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    @property
    def n_sigma(self) -> int:
        return self.sizes[0]

    @property
    def n_u(self) -> int:
        return self.sizes[1]

    @property
    def n_p(self) -> int:
        return self.sizes[2]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.matrix.shape

    def split(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        s, u = self.n_sigma, self.n_u
        return x[:s], x[s:s + u], x[s + u:]

    def join(self, sigma: np.ndarray, u: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
        return np.concatenate([sigma, u, coeffs])

    def rhs(self, f: np.ndarray, load: bool = False) -> np.ndarray:
        """
        右端 [0; b; 0]

        Args:
            f: W^k 系数向量, 或 load=True 时的载荷 ⟨f, φ_i⟩
        """
        f = self.complex.check_vector(self.degree, f, "right-hand side")
        b = f if load else self.complex.gram_at(self.degree) @ f
        return np.concatenate([np.zeros(self.n_sigma), b, np.zeros(self.n_p)])

    def bilinear(self, x: np.ndarray, y: np.ndarray) -> float:
        """B(x; y) = yᵀ A x"""
        return float(y @ (self.matrix @ x))

    # ==================== 求解 ====================

    def _condition_estimate(self) -> Optional[float]:
        if self.shape[0] > COND_ESTIMATE_LIMIT:
            return None
        return float(np.linalg.cond(self.symmetric.toarray()))

    def factor(self):
        """稀疏 LU 分解, 首次调用时构造, 之后只读共享"""
        with self._lock:
            if self._factor is None:
                try:
                    self._factor = splu(self.symmetric.tocsc())
                except RuntimeError as e:
                    raise FactorizationError(
                        f"saddle matrix of degree {self.degree} is singular: {e}", self._condition_estimate()
                    ) from e
            return self._factor

    def solve(self, rhs: np.ndarray, method: str = "direct") -> np.ndarray:
        """
        解对称化系统; 右端第一块为零时与原式同解
        """
        n = self.shape[0]
        if n == 0:
            return np.zeros(0)
        sym_rhs = rhs.copy()
        sym_rhs[:self.n_sigma] *= -1.0
        if method == "direct":
            x = self.factor().solve(sym_rhs)
        elif method == "minres":
            x, info = minres(self.symmetric, sym_rhs, rtol=MINRES_RTOL, maxiter=20 * n)
            if info != 0:
                res = float(np.linalg.norm(self.symmetric @ x - sym_rhs))
                raise ConvergenceError("MINRES did not reach the requested residual", res, info)
        else:
            raise ValueError(f"unknown linear solver '{method}' (expected 'direct' or 'minres')")
        if not np.all(np.isfinite(x)):
            raise FactorizationError(f"non-finite solution of degree-{self.degree} saddle system",
                                     self._condition_estimate())
        return x

    # ==================== 残差 ====================

    def basis_norms(self) -> np.ndarray:
        """行对应测试函数的范数: τ, v 取 V-范数, q 为 W-单位正交"""
        c, k = self.complex, self.degree
        parts = [np.sqrt(c.graph_gram(k - 1).diagonal()) if self.n_sigma else np.zeros(0),
                 np.sqrt(c.graph_gram(k).diagonal()),
                 np.ones(self.n_p)]
        return np.concatenate(parts)

    def solution_scale(self, x: np.ndarray, rhs: np.ndarray) -> float:
        """‖σ‖_V + ‖u‖_V + ‖c‖ + ‖b‖, 残差的相对化尺度"""
        c, k = self.complex, self.degree
        sigma, u, coeffs = self.split(x)
        scale = np.sqrt(max(float(u @ (c.graph_gram(k) @ u)), 0.0)) + float(np.linalg.norm(coeffs))
        if self.n_sigma:
            scale += np.sqrt(max(float(sigma @ (c.graph_gram(k - 1) @ sigma)), 0.0))
        return float(scale + np.linalg.norm(rhs))

    def relative_residual(self, x: np.ndarray, rhs: np.ndarray, extra: Optional[np.ndarray] = None) -> float:
        """
        max_i |r_i| / (尺度 · ‖φ_i‖), r = A x (+ extra) - rhs
        """
        r = self.matrix @ x - rhs
        if extra is not None:
            r = r + extra
        if r.size == 0:
            return 0.0
        scale = self.solution_scale(x, rhs)
        weights = self.basis_norms()
        if scale == 0.0:
            return float(np.abs(r).max())
        return float(np.max(np.abs(r) / (scale * np.maximum(weights, np.finfo(float).tiny))))


def assemble_mixed(c: HilbertComplex, k: int) -> SaddleSystem:
    """
    组装次数 k 的混合系统

    k = k_min 时 σ 块为空, 系统退化为 (u, p) 两块
    """
    c.require(k)
    m0 = c.gram_at(k - 1)
    g = c.diff_at(k - 1)
    m = c.gram_at(k)
    d = c.diff_at(k)
    m_next = c.gram_at(k + 1)
    h = harmonic_basis(c, k)
    sizes = (m0.shape[0], m.shape[0], h.shape[1])

    gtm = (g.T @ m).tocsr()
    mg = (m @ g).tocsr()
    stiff = (d.T @ m_next @ d).tocsr()
    mh = m @ h
    blocks_a = {(0, 0): m0, (0, 1): -gtm, (1, 0): mg, (1, 1): stiff, (1, 2): mh, (2, 1): mh.T}
    blocks_s = {(0, 0): -m0, (0, 1): gtm, (1, 0): mg, (1, 1): stiff, (1, 2): mh, (2, 1): mh.T}
    matrix = assemble_blocks(blocks_a, sizes)
    symmetric = assemble_blocks(blocks_s, sizes)
    logger.debug("[assemble_mixed] k=%d sizes=%s nnz=%d", k, sizes, matrix.nnz)
    return SaddleSystem(complex=c, degree=k, matrix=matrix, symmetric=symmetric, harmonic=h, sizes=sizes)
