"""
最低阶 Whitney 形式的 de Rham 复形

D^k 为带符号关联矩阵 (整数), M^k 为精确积分得到的 Whitney 质量矩阵。
并行组装时按单元分块, 三元组按单元顺序拼接, 结果与串行逐位一致。
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
import scipy.sparse as sp

from derham.mesh import SimplicialMesh, interior_indices
from hilbert.complex import HilbertComplex
from utils.errors import UnsupportedDimensionError
from utils.utils import get_logger

logger = get_logger(__name__)

Triplets = Tuple[np.ndarray, np.ndarray, np.ndarray]


@dataclass(frozen=True, eq=False)
class WhitneyRealization:
    """复形与网格之间的对应: dofs[k] 为第 k 个空间每个系数对应的 k-单纯形下标"""
    mesh: SimplicialMesh
    essential: bool
    dofs: Tuple[np.ndarray, ...]

    def scatter(self, k: int, coeffs: np.ndarray) -> np.ndarray:
        """系数扩展到全部 k-单纯形 (边界补零)"""
        full = np.zeros(self.mesh.count(k))
        full[self.dofs[k]] = coeffs
        return full

    def gather(self, k: int, full: np.ndarray) -> np.ndarray:
        return np.asarray(full)[self.dofs[k]]


def triangle_edges(mesh: SimplicialMesh) -> np.ndarray:
    """每个三角形 (a<b<c) 的三条边 (a,b), (a,c), (b,c) 的全局下标"""
    tri = mesh.top
    return np.column_stack([
        mesh.index_of(1, tri[:, [0, 1]]),
        mesh.index_of(1, tri[:, [0, 2]]),
        mesh.index_of(1, tri[:, [1, 2]]),
    ])


# ==================== 单元质量矩阵 ====================

def _segment_lengths(coords: np.ndarray) -> np.ndarray:
    diff = coords[:, 1, :] - coords[:, 0, :]
    sq = diff[:, 0] * diff[:, 0]
    for g in range(1, diff.shape[1]):
        sq = sq + diff[:, g] * diff[:, g]
    return np.sqrt(sq)


def _triangle_geometry(coords: np.ndarray):
    x0, y0 = coords[:, 0, 0], coords[:, 0, 1]
    x1, y1 = coords[:, 1, 0], coords[:, 1, 1]
    x2, y2 = coords[:, 2, 0], coords[:, 2, 1]
    det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
    gx = [(y1 - y2) / det, (y2 - y0) / det, (y0 - y1) / det]
    gy = [(x2 - x1) / det, (x0 - x2) / det, (x1 - x0) / det]
    return 0.5 * np.abs(det), gx, gy


def _local_mass(mesh: SimplicialMesh, k: int, elems: np.ndarray, tri_edges: np.ndarray) -> Triplets:
    """单元块的 (行, 列, 值), 单元优先顺序"""
    top = mesh.top[elems]
    coords = mesh.vertices[top]

    if mesh.dim == 1:
        length = _segment_lengths(coords)
        if k == 0:
            idx = top
            vals = np.stack([length / 3.0, length / 6.0, length / 6.0, length / 3.0], axis=1)
        else:
            idx = elems[:, None]
            vals = (1.0 / length)[:, None]
    elif mesh.dim == 2:
        area, gx, gy = _triangle_geometry(coords)
        if k == 0:
            idx = top
            cols = []
            for a in range(3):
                for b in range(3):
                    cols.append(area / 6.0 if a == b else area / 12.0)
            vals = np.stack(cols, axis=1)
        elif k == 1:
            idx = tri_edges[elems]
            local_edges = ((0, 1), (0, 2), (1, 2))

            def mm(a, b):
                return area / 6.0 if a == b else area / 12.0

            def gg(a, b):
                return gx[a] * gx[b] + gy[a] * gy[b]

            cols = []
            for (i, j) in local_edges:
                for (p, q) in local_edges:
                    cols.append(mm(i, p) * gg(j, q) - mm(i, q) * gg(j, p)
                                - mm(j, p) * gg(i, q) + mm(j, q) * gg(i, p))
            vals = np.stack(cols, axis=1)
        else:
            idx = elems[:, None]
            vals = (1.0 / area)[:, None]
    else:
        raise UnsupportedDimensionError(f"Whitney forms on dimension {mesh.dim} meshes are not supported")

    nloc = idx.shape[1]
    rows = np.repeat(idx, nloc, axis=1).ravel()
    cols = np.tile(idx, (1, nloc)).ravel()
    return rows, cols, vals.ravel()


def assemble_mass(mesh: SimplicialMesh, k: int, workers: int = 1) -> sp.csr_matrix:
    """
    k-形式质量矩阵 (全部单纯形)

    Args:
        workers: >1 时线程池分块组装, 按单元顺序归约
    """
    n_top = mesh.count(mesh.dim)
    tri_edges = triangle_edges(mesh) if (mesh.dim == 2 and k == 1) else None
    chunks = np.array_split(np.arange(n_top), max(1, int(workers)))
    chunks = [c for c in chunks if c.size]
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda e: _local_mass(mesh, k, e, tri_edges), chunks))
    else:
        parts = [_local_mass(mesh, k, c, tri_edges) for c in chunks]
    rows = np.concatenate([p[0] for p in parts])
    cols = np.concatenate([p[1] for p in parts])
    vals = np.concatenate([p[2] for p in parts])
    n = mesh.count(k)
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def incidence(mesh: SimplicialMesh, k: int) -> sp.csr_matrix:
    """D^k: k-单纯形 -> (k+1)-单纯形 的带符号关联矩阵"""
    if k == 0:
        e = mesh.simplices[1]
        ne = e.shape[0]
        rows = np.concatenate([np.arange(ne), np.arange(ne)])
        cols = np.concatenate([e[:, 0], e[:, 1]])
        vals = np.concatenate([-np.ones(ne), np.ones(ne)])
        return sp.coo_matrix((vals, (rows, cols)), shape=(ne, mesh.count(0))).tocsr()
    if k == 1 and mesh.dim == 2:
        te = triangle_edges(mesh)
        nt = te.shape[0]
        rows = np.repeat(np.arange(nt), 3)
        cols = te.ravel()
        # ∂[a,b,c] = [b,c] - [a,c] + [a,b]
        vals = np.tile(np.array([1.0, -1.0, 1.0]), nt)
        return sp.coo_matrix((vals, (rows, cols)), shape=(nt, mesh.count(1))).tocsr()
    raise UnsupportedDimensionError(f"no D^{k} on a dimension-{mesh.dim} mesh")


# ==================== 复形 ====================

_LABELS = {
    1: {0: "P1 vertex functions", 1: "P0 edge densities"},
    2: {0: "P1 vertex functions", 1: "Whitney edge forms", 2: "P0 face densities"},
}


def whitney_complex(mesh: SimplicialMesh, essential: bool = False, workers: int = 1) -> HilbertComplex:
    """
    Whitney de Rham 复形

    Args:
        mesh: 维数 <= 2 的网格
        essential: True 时去掉边界单纯形 (零迹空间)
        workers: 质量矩阵组装线程数
    Returns:
        HilbertComplex, realization 为 WhitneyRealization
    """
    d = mesh.dim
    if d < 1 or d > 2:
        raise UnsupportedDimensionError(f"Whitney complex needs a mesh of dimension 1 or 2, got {d}")
    if essential:
        dofs = tuple(interior_indices(mesh))
    else:
        dofs = tuple(np.arange(mesh.count(k)) for k in range(d + 1))

    gram: Dict[int, sp.csr_matrix] = {}
    diff: Dict[int, sp.csr_matrix] = {}
    for k in range(d + 1):
        m = assemble_mass(mesh, k, workers=workers)
        gram[k] = m[dofs[k]][:, dofs[k]].tocsr()
    for k in range(d):
        inc = incidence(mesh, k)
        diff[k] = inc[dofs[k + 1]][:, dofs[k]].tocsr()

    realization = WhitneyRealization(mesh=mesh, essential=essential, dofs=dofs)
    labels = dict(_LABELS[d])
    logger.debug("[whitney_complex] %s essential=%s dims=%s", mesh.name, essential,
                 [gram[k].shape[0] for k in range(d + 1)])
    return HilbertComplex(degrees=(0, d), gram=gram, diff=diff, labels=labels, realization=realization)


def mass_condition_numbers(c: HilbertComplex) -> List[float]:
    """各次数质量矩阵的条件数 (稠密计算, 仅用于小网格报告)"""
    out = []
    for k in c.degree_range():
        m = c.gram[k].toarray()
        if m.size == 0:
            out.append(1.0)
            continue
        eigs = np.linalg.eigvalsh(m)
        out.append(float(eigs[-1] / eigs[0]))
    return out
