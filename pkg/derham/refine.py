"""
一致加密 (1D 二分, 2D 红加密) 与延拓态射

i_h 由细网格顶点在粗单元中的重心坐标精确给出; π_h 为标准 de Rham 映射
(顶点取值, 半边求和, 子三角形求和), 与微分交换。
加密只用中点, 所有系数都是 2 的负幂, 浮点下精确。
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from derham.mesh import SimplicialMesh, interior_indices, mesh_from_top
from derham.whitney import triangle_edges
from hilbert.complex import HilbertComplex
from utils.errors import UnsupportedDimensionError
from utils.utils import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True, eq=False)
class ProlongationMorphism:
    """
    inject[k]: i_h^k, (细系数 × 粗系数)
    project[k]: π_h^k, (粗系数 × 细系数)
    """
    coarse: SimplicialMesh
    fine: SimplicialMesh
    inject: Dict[int, sp.csr_matrix]
    project: Dict[int, sp.csr_matrix]
    essential: bool = False

    def restrict(self, coarse_dofs: Sequence[np.ndarray], fine_dofs: Sequence[np.ndarray],
                 essential: bool = True) -> "ProlongationMorphism":
        inject = {k: m[fine_dofs[k]][:, coarse_dofs[k]].tocsr() for k, m in self.inject.items()}
        project = {k: m[coarse_dofs[k]][:, fine_dofs[k]].tocsr() for k, m in self.project.items()}
        return ProlongationMorphism(self.coarse, self.fine, inject, project, essential)

    def essential_flavor(self) -> "ProlongationMorphism":
        """零迹子复形上的限制"""
        if self.essential:
            return self
        return self.restrict(interior_indices(self.coarse), interior_indices(self.fine))

    def violations(self, coarse_c: HilbertComplex, fine_c: HilbertComplex) -> Dict[str, float]:
        """
        三个不变量的最大违背量:
          morphism: D_fine i - i D_coarse
          one_sided_inverse: π i - I
          commuting: π D_fine - D_coarse π
        """
        out = {"morphism": 0.0, "one_sided_inverse": 0.0, "commuting": 0.0}
        for k, i_k in self.inject.items():
            eye = sp.identity(i_k.shape[1], format="csr")
            out["one_sided_inverse"] = max(out["one_sided_inverse"], _abs_max(self.project[k] @ i_k - eye))
            if k + 1 in self.inject:
                lhs = fine_c.diff_at(k) @ i_k
                rhs = self.inject[k + 1] @ coarse_c.diff_at(k)
                out["morphism"] = max(out["morphism"], _abs_max(lhs - rhs))
                lhs = self.project[k + 1] @ fine_c.diff_at(k)
                rhs = coarse_c.diff_at(k) @ self.project[k]
                out["commuting"] = max(out["commuting"], _abs_max(lhs - rhs))
        return out

    def projection_norms(self, coarse_c: HilbertComplex, fine_c: HilbertComplex, norm: str = "W",
                         degrees: Optional[Sequence[int]] = None) -> Dict[int, float]:
        """
        ‖π_h^k‖ 从细空间到粗空间, W 或 V (图范数) 下

        稠密广义特征值 λ_max(πᵀ G_coarse π, G_fine), 只适合中小规模网格。
        π i = I 且 i 保范数时结果不小于 1。
        """
        if norm not in ("W", "V"):
            raise ValueError(f"unknown norm '{norm}' (expected 'W' or 'V')")
        out = {}
        for k in (self.project if degrees is None else degrees):
            p = self.project[k].toarray()
            if p.size == 0:
                out[k] = 0.0
                continue
            g_c = coarse_c.gram_at(k) if norm == "W" else coarse_c.graph_gram(k)
            g_f = fine_c.gram_at(k) if norm == "W" else fine_c.graph_gram(k)
            a = p.T @ (g_c @ p)
            top = sla.eigh(0.5 * (a + a.T), g_f.toarray(), eigvals_only=True)[-1]
            out[k] = float(np.sqrt(max(top, 0.0)))
        return out


def _abs_max(a) -> float:
    a = sp.csr_matrix(a)
    return float(abs(a).max()) if a.nnz else 0.0


def compose(first: ProlongationMorphism, second: ProlongationMorphism) -> ProlongationMorphism:
    """first: 粗 -> 中, second: 中 -> 细"""
    inject = {k: (second.inject[k] @ first.inject[k]).tocsr() for k in first.inject}
    project = {k: (first.project[k] @ second.project[k]).tocsr() for k in first.project}
    return ProlongationMorphism(first.coarse, second.fine, inject, project,
                                first.essential and second.essential)


# ==================== 加密 ====================

def _midpoint_coords(mesh: SimplicialMesh, edges: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """边中点; 网格带曲线时, 新点按参数中点吸附到曲线上"""
    if mesh.curve is not None and mesh.vertex_params is not None:
        ta = mesh.vertex_params[edges[:, 0]]
        tb = mesh.vertex_params[edges[:, 1]]
        dt = np.mod(tb - ta + np.pi, 2.0 * np.pi) - np.pi
        tm = np.mod(ta + 0.5 * dt, 2.0 * np.pi)
        return mesh.curve.point(tm), tm
    return 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]]), None


def _children(dim: int, loc: List[int], mids: Dict[Tuple[int, int], int]) -> List[Tuple[int, ...]]:
    if dim == 1:
        a, b = loc
        m = mids[(0, 1)]
        return [tuple(sorted((a, m))), tuple(sorted((b, m)))]
    a, b, c = loc
    mab, mac, mbc = mids[(0, 1)], mids[(0, 2)], mids[(1, 2)]
    return [tuple(sorted(t)) for t in ((a, mab, mac), (b, mab, mbc), (c, mac, mbc), (mab, mac, mbc))]


def _whitney_edge_integral(bp: np.ndarray, bq: np.ndarray, s: int, t: int) -> float:
    """∫_{PQ} (λ_s dλ_t - λ_t dλ_s); 线性函数在中点取值即平均"""
    bm = 0.5 * (bp + bq)
    return float(bm[s] * (bq[t] - bp[t]) - bm[t] * (bq[s] - bp[s]))


def _face_ratio(b0: np.ndarray, b1: np.ndarray, b2: np.ndarray) -> float:
    """子三角形在父三角形重心坐标 (λ1, λ2) 下的有向面积比"""
    return float((b1[1] - b0[1]) * (b2[2] - b0[2]) - (b2[1] - b0[1]) * (b1[2] - b0[2]))


def refine_uniform(mesh: SimplicialMesh) -> Tuple[SimplicialMesh, ProlongationMorphism]:
    """
    一致加密: 1D 每条边二分, 2D 每个三角形分成 4 个

    Returns:
        (细网格, 自然边界的延拓态射); 零迹版本用 morphism.essential_flavor()
    """
    d = mesh.dim
    if d not in (1, 2):
        raise UnsupportedDimensionError(f"uniform refinement needs dimension 1 or 2, got {d}")
    nv = mesh.count(0)
    edges = mesh.simplices[1]
    mid_xy, mid_t = _midpoint_coords(mesh, edges)
    vertices = np.vstack([mesh.vertices, mid_xy])
    params = None
    if mid_t is not None:
        params = np.concatenate([mesh.vertex_params, mid_t])

    top = mesh.top
    top_edges = None
    if d == 2:
        top_edges = triangle_edges(mesh)

    local_edges = [(0, 1)] if d == 1 else [(0, 1), (0, 2), (1, 2)]
    fine_tops: List[Tuple[int, ...]] = []
    # 每个 k 的条目: (细单纯形, 粗下标, 值); 共享面上的重复条目取同一值
    inj: Dict[int, Dict[Tuple[Tuple[int, ...], int], float]] = {k: {} for k in range(d + 1)}
    proj: Dict[int, Dict[Tuple[int, Tuple[int, ...]], float]] = {k: {} for k in range(d + 1)}

    for e_idx in range(top.shape[0]):
        loc = [int(v) for v in top[e_idx]]
        if d == 1:
            coarse_edges = [e_idx]
        else:
            coarse_edges = [int(x) for x in top_edges[e_idx]]
        mids = {le: nv + ce for le, ce in zip(local_edges, coarse_edges)}

        bary: Dict[int, np.ndarray] = {}
        for s, v in enumerate(loc):
            bary[v] = np.eye(d + 1)[s]
        for (s, t), m in mids.items():
            bary[m] = 0.5 * (np.eye(d + 1)[s] + np.eye(d + 1)[t])

        children = _children(d, loc, mids)
        fine_tops.extend(children)

        # 0-形式
        for v, b in bary.items():
            for s, cv in enumerate(loc):
                if b[s] != 0.0:
                    inj[0][((v,), cv)] = float(b[s])
        for cv in loc:
            proj[0][(cv, (cv,))] = 1.0

        # 1-形式
        fine_edges = set()
        for child in children:
            for p in range(len(child)):
                for q in range(p + 1, len(child)):
                    fine_edges.add((child[p], child[q]))
        for (p, q) in sorted(fine_edges):
            for (s, t), ce in zip(local_edges, coarse_edges):
                val = _whitney_edge_integral(bary[p], bary[q], s, t)
                if val != 0.0:
                    inj[1][((p, q), ce)] = val
                # 落在粗边 (s,t) 上的半边
                on_edge = all(bary[x][u] == 0.0 for x in (p, q) for u in range(d + 1) if u not in (s, t))
                if on_edge:
                    proj[1][(ce, (p, q))] = float(np.sign(bary[q][t] - bary[p][t]))

        # 2-形式
        if d == 2:
            for child in children:
                ratio = _face_ratio(bary[child[0]], bary[child[1]], bary[child[2]])
                inj[2][(child, e_idx)] = ratio
                proj[2][(e_idx, child)] = float(np.sign(ratio))

    fine = mesh_from_top(vertices, np.array(fine_tops), name=f"{mesh.name}/r",
                         curve=mesh.curve, vertex_params=params)

    inject: Dict[int, sp.csr_matrix] = {}
    project: Dict[int, sp.csr_matrix] = {}
    for k in range(d + 1):
        n_f, n_c = fine.count(k), mesh.count(k)
        if inj[k]:
            f_simp = np.array([key[0] for key in inj[k]], dtype=np.int64)
            rows = fine.index_of(k, f_simp)
            cols = np.array([key[1] for key in inj[k]], dtype=np.int64)
            vals = np.array(list(inj[k].values()))
            inject[k] = sp.coo_matrix((vals, (rows, cols)), shape=(n_f, n_c)).tocsr()
        else:
            inject[k] = sp.csr_matrix((n_f, n_c))
        f_simp = np.array([key[1] for key in proj[k]], dtype=np.int64)
        cols = fine.index_of(k, f_simp)
        rows = np.array([key[0] for key in proj[k]], dtype=np.int64)
        vals = np.array(list(proj[k].values()))
        project[k] = sp.coo_matrix((vals, (rows, cols)), shape=(n_c, n_f)).tocsr()

    logger.debug("[refine_uniform] %s -> %s (h %.4g -> %.4g)", mesh.name, fine.name, mesh.h, fine.h)
    return fine, ProlongationMorphism(mesh, fine, inject, project, essential=False)


def refine_levels(mesh: SimplicialMesh, levels: int,
                  essential: bool = False) -> Tuple[SimplicialMesh, Optional[ProlongationMorphism]]:
    """连续加密 levels 次并复合态射; levels = 0 时态射为 None"""
    current = mesh
    morphism: Optional[ProlongationMorphism] = None
    for _ in range(levels):
        fine, step = refine_uniform(current)
        morphism = step if morphism is None else compose(morphism, step)
        current = fine
    if morphism is not None and essential:
        morphism = morphism.essential_flavor()
    return current, morphism
