"""单纯形上的 Gauss 积分与 P1 场求值"""

from functools import lru_cache
from typing import Callable, Tuple

import numpy as np

from derham.mesh import SimplicialMesh
from utils.errors import UnsupportedDimensionError


@lru_cache(maxsize=None)
def _gauss01(n: int) -> Tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def simplex_rule(dim: int, degree: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    参考单纯形上对 degree 次多项式精确的积分规则

    Returns:
        bary: (nq, dim+1) 重心坐标
        weights: (nq,) 和为 1, 使用时乘以单纯形体积
    """
    degree = max(int(degree), 0)
    if dim == 1:
        x, w = _gauss01(max(1, (degree + 2) // 2))
        bary = np.column_stack([1.0 - x, x])
        return bary, w
    if dim == 2:
        # 折叠 (Duffy) 映射, 雅可比因子 (1-η) 多一次
        n = max(1, (degree + 3) // 2)
        x, wx = _gauss01(n)
        xi, eta = np.meshgrid(x, x, indexing="ij")
        wxi, weta = np.meshgrid(wx, wx, indexing="ij")
        px = (xi * (1.0 - eta)).ravel()
        py = eta.ravel()
        w = (wxi * weta * (1.0 - eta)).ravel() * 2.0
        bary = np.column_stack([1.0 - px - py, px, py])
        return bary, w
    raise UnsupportedDimensionError(f"no quadrature for dimension {dim}")


def element_gradients(mesh: SimplicialMesh) -> np.ndarray:
    """
    最高维单纯形上重心坐标的梯度 (nT, dim+1, gdim), 嵌入情形用伪逆
    """
    top = mesh.top
    coords = mesh.vertices[top]
    edges = coords[:, 1:, :] - coords[:, :1, :]
    # edges: (nT, dim, gdim); λ_{1..dim} 的梯度为 pinv(edgesᵀ) 的行
    pinv = np.linalg.pinv(np.transpose(edges, (0, 2, 1)))
    grads = np.concatenate([-pinv.sum(axis=1, keepdims=True), pinv], axis=1)
    return grads


def quadrature_points(mesh: SimplicialMesh, bary: np.ndarray) -> np.ndarray:
    """物理积分点 (nT, nq, gdim)"""
    coords = mesh.vertices[mesh.top]
    return np.einsum("qa,tag->tqg", bary, coords)


def p1_values(mesh: SimplicialMesh, u: np.ndarray, bary: np.ndarray) -> np.ndarray:
    """顶点系数 u 在各积分点的值 (nT, nq)"""
    return u[mesh.top] @ bary.T


def p1_gradients(mesh: SimplicialMesh, u: np.ndarray) -> np.ndarray:
    """逐单元常数梯度 (nT, gdim)"""
    return np.einsum("ta,tag->tg", u[mesh.top], element_gradients(mesh))


def load_vector(mesh: SimplicialMesh, fn: Callable[[np.ndarray], np.ndarray], degree: int) -> np.ndarray:
    """
    b_i = ∫ fn(x) λ_i(x) dx, 对所有顶点

    Args:
        fn: 接收 (..., gdim) 点阵, 返回 (...) 值
        degree: 积分精确阶
    """
    bary, w = simplex_rule(mesh.dim, degree)
    pts = quadrature_points(mesh, bary)
    vals = fn(pts)
    vol = mesh.volumes()
    local = np.einsum("tq,q,qa->ta", vals, w, bary) * vol[:, None]
    out = np.zeros(mesh.count(0))
    np.add.at(out, mesh.top.ravel(), local.ravel())
    return out


def integrate(mesh: SimplicialMesh, values: np.ndarray, weights: np.ndarray) -> float:
    """Σ_T |T| Σ_q w_q values[T, q]"""
    return float(np.sum((values @ weights) * mesh.volumes()))


def interpolate_vertex(mesh: SimplicialMesh, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """顶点插值 (0-形式的 de Rham 映射)"""
    return np.asarray(fn(mesh.vertices), dtype=float)
