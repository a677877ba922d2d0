"""
单纯网格

单纯形按顶点升序定向, 每个维数的单纯形按字典序排列; 这两条保证关联矩阵符号确定。
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from utils.errors import MeshError, UnsupportedDimensionError
from utils.utils import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class EllipseCurve:
    """闭曲线 (a cos t, b sin t); a = b 时为圆"""
    a: float = 1.0
    b: float = 1.0

    def point(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.stack([self.a * np.cos(t), self.b * np.sin(t)], axis=-1)

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b}


@dataclass(frozen=True, eq=False)
class SimplicialMesh:
    """
    vertices: (nv, gdim) 坐标
    simplices[j]: (n_j, j+1) 顶点下标, 行内升序, 行间字典序
    """
    vertices: np.ndarray
    simplices: Tuple[np.ndarray, ...]
    name: str = ""
    curve: Optional[EllipseCurve] = None
    # 曲线参数 (仅当顶点落在 curve 上)
    vertex_params: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return len(self.simplices) - 1

    @property
    def gdim(self) -> int:
        return self.vertices.shape[1]

    def count(self, k: int) -> int:
        return self.simplices[k].shape[0]

    @property
    def top(self) -> np.ndarray:
        return self.simplices[-1]

    @property
    def h(self) -> float:
        """最大单纯形直径"""
        diam = 0.0
        top = self.top
        for a in range(top.shape[1]):
            for b in range(a + 1, top.shape[1]):
                lengths = np.linalg.norm(self.vertices[top[:, b]] - self.vertices[top[:, a]], axis=1)
                diam = max(diam, float(lengths.max()))
        return diam

    def volumes(self, k: Optional[int] = None) -> np.ndarray:
        """k-单纯形的 k 维体积 (无符号)"""
        k = self.dim if k is None else k
        simp = self.simplices[k]
        if k == 0:
            return np.ones(simp.shape[0])
        p0 = self.vertices[simp[:, 0]]
        edges = np.stack([self.vertices[simp[:, j]] - p0 for j in range(1, k + 1)], axis=2)
        gram = np.einsum("ngi,ngj->nij", edges, edges)
        fact = 1.0 if k == 1 else 2.0
        return np.sqrt(np.abs(np.linalg.det(gram))) / fact

    def orientations(self) -> np.ndarray:
        """
        最高维单纯形在升序顶点定向下的几何符号 (+1 逆时针 / 正向, -1 顺时针)

        Whitney 组装只依赖组合定向, 这里仅供检查; 仅对 gdim == dim 的网格有定义。
        """
        if self.gdim != self.dim:
            raise MeshError(f"orientation sign needs gdim == dim, mesh '{self.name}' has "
                            f"gdim {self.gdim} and dim {self.dim}")
        top = self.top
        p0 = self.vertices[top[:, 0]]
        edges = np.stack([self.vertices[top[:, j]] - p0 for j in range(1, self.dim + 1)], axis=2)
        return np.sign(np.linalg.det(edges)).astype(int)

    def index_of(self, k: int, rows: np.ndarray) -> np.ndarray:
        """给定若干 (已排序) k-单纯形, 返回其在 simplices[k] 中的下标"""
        keys = _encode(self.simplices[k], self.vertices.shape[0])
        query = _encode(np.atleast_2d(rows), self.vertices.shape[0])
        pos = np.searchsorted(keys, query)
        if np.any(pos >= keys.shape[0]) or np.any(keys[np.minimum(pos, keys.shape[0] - 1)] != query):
            raise MeshError(f"{k}-simplex not found in mesh '{self.name}'")
        return pos


def _encode(rows: np.ndarray, base: int) -> np.ndarray:
    code = np.zeros(rows.shape[0], dtype=np.int64)
    for j in range(rows.shape[1]):
        code = code * base + rows[:, j].astype(np.int64)
    return code


def _unique_rows(rows: np.ndarray) -> np.ndarray:
    rows = np.sort(np.asarray(rows, dtype=np.int64), axis=1)
    return np.unique(rows, axis=0)


def mesh_from_top(vertices: np.ndarray, top: np.ndarray, name: str = "",
                  curve: Optional[EllipseCurve] = None,
                  vertex_params: Optional[np.ndarray] = None) -> SimplicialMesh:
    """
    由最高维单纯形构造完整网格 (所有面按字典序)
    """
    vertices = np.asarray(vertices, dtype=float)
    if vertices.ndim == 1:
        vertices = vertices[:, None]
    raw_count = np.asarray(top).shape[0]
    top = _unique_rows(top)
    d = top.shape[1] - 1
    if d > 2:
        raise UnsupportedDimensionError(f"mesh dimension {d} > 2 is not supported")
    if top.size and (top.min() < 0 or top.max() >= vertices.shape[0]):
        raise MeshError("simplex vertex index out of range")
    simplices: List[np.ndarray] = [np.arange(vertices.shape[0], dtype=np.int64)[:, None]]
    if d == 2:
        edges = np.concatenate([top[:, [0, 1]], top[:, [0, 2]], top[:, [1, 2]]])
        simplices.append(_unique_rows(edges))
    if d >= 1:
        simplices.append(top)
    mesh = SimplicialMesh(vertices=vertices, simplices=tuple(simplices), name=name,
                          curve=curve, vertex_params=vertex_params)
    _check_mesh(mesh, raw_count=raw_count)
    return mesh


def _check_mesh(mesh: SimplicialMesh, raw_count: int):
    """重复和退化检查; 体积无符号, 顺时针单纯形合法 (见 orientations)"""
    if mesh.count(mesh.dim) != raw_count:
        raise MeshError(f"mesh '{mesh.name}' has duplicate top simplices")
    vol = mesh.volumes()
    if np.any(vol <= 1e-14 * max(mesh.h, 1e-300) ** mesh.dim):
        raise MeshError(f"mesh '{mesh.name}' has degenerate top simplices")


# ==================== 网格族 ====================

def unit_interval_mesh(n: int) -> SimplicialMesh:
    if n < 1:
        raise MeshError("unit interval mesh needs n >= 1 elements")
    x = np.linspace(0.0, 1.0, n + 1)
    top = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    return mesh_from_top(x[:, None], top, name=f"interval{n}")


def cycle_mesh(n: int, curve: Optional[EllipseCurve] = None) -> SimplicialMesh:
    """
    n 个顶点的环 (圆周拓扑); 顶点取曲线上的等参数点, 默认单位圆
    """
    if n < 3:
        raise MeshError("cycle mesh needs n >= 3 vertices")
    curve = curve or EllipseCurve()
    t = 2.0 * np.pi * np.arange(n) / n
    top = np.column_stack([np.arange(n), (np.arange(n) + 1) % n])
    return mesh_from_top(curve.point(t), top, name=f"cycle{n}", curve=curve, vertex_params=t)


def triangulated_square_mesh(n: int) -> SimplicialMesh:
    """[0,1]² 上 n×n 个正方形, 每个沿对角线切成两个三角形, 共 2n² 个"""
    if n < 1:
        raise MeshError("square mesh needs n >= 1 cells per side")
    x = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(x, x, indexing="xy")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])
    tris = []
    for j in range(n):
        for i in range(n):
            v00 = j * (n + 1) + i
            v10 = v00 + 1
            v01 = v00 + (n + 1)
            v11 = v01 + 1
            tris.append((v00, v10, v11))
            tris.append((v00, v01, v11))
    return mesh_from_top(vertices, np.array(tris), name=f"square{n}")


MESH_FAMILIES = {
    "interval": unit_interval_mesh,
    "cycle": cycle_mesh,
    "square": triangulated_square_mesh,
}


def family_mesh(family: str, n: int, curve: Optional[EllipseCurve] = None) -> SimplicialMesh:
    if family not in MESH_FAMILIES:
        raise MeshError(f"unknown mesh family '{family}' (expected one of {sorted(MESH_FAMILIES)})")
    if family == "cycle":
        return cycle_mesh(n, curve)
    return MESH_FAMILIES[family](n)


# ==================== 边界 ====================

def boundary_masks(mesh: SimplicialMesh) -> List[np.ndarray]:
    """
    每个维数的边界掩码; 最高维单纯形永远不在边界上
    """
    d = mesh.dim
    masks = [np.zeros(mesh.count(k), dtype=bool) for k in range(d + 1)]
    if d == 0:
        return masks
    top = mesh.top
    faces = np.concatenate([np.delete(top, j, axis=1) for j in range(d + 1)])
    faces = np.sort(faces, axis=1)
    uniq, counts = np.unique(faces, axis=0, return_counts=True)
    boundary_faces = uniq[counts == 1]
    if boundary_faces.shape[0] == 0:
        return masks
    masks[d - 1][mesh.index_of(d - 1, boundary_faces)] = True
    if d == 2:
        bverts = np.unique(boundary_faces.ravel())
        masks[0][bverts] = True
    return masks


def interior_indices(mesh: SimplicialMesh) -> List[np.ndarray]:
    return [np.flatnonzero(~m) for m in boundary_masks(mesh)]


# ==================== JSON 读写 ====================

def mesh_to_dict(mesh: SimplicialMesh) -> dict:
    data = {
        "name": mesh.name,
        "vertices": mesh.vertices.tolist(),
        "simplices": {str(k): mesh.simplices[k].tolist() for k in range(1, mesh.dim + 1)},
    }
    if mesh.curve is not None:
        data["curve"] = mesh.curve.to_dict()
        data["vertex_params"] = mesh.vertex_params.tolist()
    return data


def mesh_from_dict(data: dict) -> SimplicialMesh:
    vertices = np.asarray(data["vertices"], dtype=float)
    simp = data["simplices"]
    top_dim = max(int(k) for k in simp)
    curve = EllipseCurve(**data["curve"]) if "curve" in data else None
    params = np.asarray(data["vertex_params"], dtype=float) if "vertex_params" in data else None
    return mesh_from_top(vertices, np.asarray(simp[str(top_dim)], dtype=np.int64),
                         name=data.get("name", ""), curve=curve, vertex_params=params)


def save_mesh(mesh: SimplicialMesh, path: str):
    # json 写 float 用 repr, 读回逐位一致
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(mesh_to_dict(mesh), f)


def load_mesh(path: str) -> SimplicialMesh:
    with open(path, "r", encoding="utf-8") as f:
        return mesh_from_dict(json.load(f))
