"""子空间基的计算: 零空间、值域、Gram 加权正交化"""

from typing import Any, Tuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from utils.utils import get_logger

logger = get_logger(__name__)

RANK_RTOL = 1e-10
# 稀疏路径在 SᵀS 的特征值上取阈值, 对应奇异值约 1e-4 相对
SPARSE_EIG_RTOL = 1e-8


def as_dense(a: Any) -> np.ndarray:
    if sp.issparse(a):
        return a.toarray()
    return np.asarray(a, dtype=float)


def _svd(a: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """返回 (U, s, Vh, rank); 秩阈值 RANK_RTOL * s_max"""
    u, s, vh = sla.svd(a, full_matrices=True)
    if s.size == 0 or s[0] == 0.0:
        return u, s, vh, 0
    rank = int(np.sum(s > RANK_RTOL * s[0]))
    return u, s, vh, rank


def matrix_rank(a: Any) -> int:
    a = as_dense(a)
    if a.size == 0:
        return 0
    return _svd(a)[3]


def null_basis(a: Any) -> np.ndarray:
    """ker A 的欧氏正交基 (列)"""
    a = as_dense(a)
    n = a.shape[1]
    if a.shape[0] == 0 or n == 0:
        return np.eye(n)
    _, _, vh, rank = _svd(a)
    return vh[rank:].T.copy()


def range_basis(a: Any) -> np.ndarray:
    """range A 的欧氏正交基 (列)"""
    a = as_dense(a)
    m = a.shape[0]
    if a.shape[1] == 0 or m == 0:
        return np.zeros((m, 0))
    u, _, _, rank = _svd(a)
    return u[:, :rank].copy()


def w_orthonormalize(basis: np.ndarray, gram: Any, drop_rtol: float = 1e-10) -> np.ndarray:
    """
    Gram 加权的修正 Gram-Schmidt (两遍), 丢弃线性相关的列

    Args:
        basis: 列向量组
        gram: 内积矩阵 M
    Returns:
        Q: QᵀMQ = I
    """
    basis = np.asarray(basis, dtype=float)
    n, m = basis.shape
    out = []
    for j in range(m):
        v = basis[:, j].copy()
        start = np.sqrt(max(float(v @ (gram @ v)), 0.0))
        if start == 0.0:
            continue
        for _ in range(2):
            for q in out:
                v -= float(q @ (gram @ v)) * q
        norm = np.sqrt(max(float(v @ (gram @ v)), 0.0))
        if norm <= drop_rtol * start:
            continue
        out.append(v / norm)
    if not out:
        return np.zeros((n, 0))
    return np.column_stack(out)


def sparse_null_basis(stacked: sp.spmatrix, start_count: int = 4) -> np.ndarray:
    """
    大规模问题的零空间: 对 SᵀS 做 shift-invert Lanczos, 取特征值 < SPARSE_EIG_RTOL·λ_max 的向量

    维数未知, 请求数量逐步翻倍直到出现一个非零特征值。
    """
    n = stacked.shape[1]
    gram = (stacked.T @ stacked).tocsc()
    if gram.nnz == 0:
        return np.eye(n)
    lam_max = float(eigsh(gram, k=1, which="LA", return_eigenvectors=False)[0])
    threshold = SPARSE_EIG_RTOL * lam_max
    count = min(start_count, n - 1)
    while True:
        vals, vecs = eigsh(gram, k=count, sigma=-1.0, which="LM")
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
        small = int(np.sum(vals < threshold))
        if small < count or count >= n - 1:
            logger.debug("[sparse_null_basis] n=%d nullity=%d (requested %d)", n, small, count)
            return vecs[:, :small]
        count = min(2 * count, n - 1)
