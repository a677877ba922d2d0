"""
有限维 Hilbert 复形

每个次数 k 对应一个系数空间 W^k (Gram 矩阵 M^k 给出内积) 和微分 D^k: W^k -> W^{k+1}。
范围之外的次数视为零空间, 微分视为零映射。
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.linalg as sla
from scipy.sparse.linalg import eigsh, norm as sparse_norm

from utils.errors import (
    DegreeOutOfRangeError,
    DimensionMismatchError,
    NonSPDGramError,
    ShapeMismatchError,
)
from utils.save_content import save_content
from utils.utils import get_logger

logger = get_logger(__name__)

# Gram 判定为奇异的相对阈值
SPD_RTOL = 1e-14
SYMMETRY_RTOL = 1e-13
COCHAIN_RTOL = 1e-13
# 超过该维数时改用稀疏算法
DENSE_LIMIT = 1500


@dataclass(frozen=True, eq=False)
class HilbertComplex:
    """
    有限维 Hilbert 复形

    gram[k] 为 M^k (CSR), diff[k] 为 D^k (CSR), k_min <= k < k_max。
    realization 可选, 指向具体的网格实现 (Whitney 复形会附带)。
    """
    degrees: Tuple[int, int]
    gram: Dict[int, sp.csr_matrix]
    diff: Dict[int, sp.csr_matrix]
    labels: Dict[int, str] = field(default_factory=dict)
    realization: Any = None

    @property
    def k_min(self) -> int:
        return self.degrees[0]

    @property
    def k_max(self) -> int:
        return self.degrees[1]

    def degree_range(self) -> range:
        return range(self.k_min, self.k_max + 1)

    def in_range(self, k: int) -> bool:
        return self.k_min <= k <= self.k_max

    def require(self, k: int):
        if not self.in_range(k):
            raise DegreeOutOfRangeError(k, self.k_min, self.k_max)

    def dim(self, k: int) -> int:
        if not self.in_range(k):
            return 0
        return self.gram[k].shape[0]

    def gram_at(self, k: int) -> sp.csr_matrix:
        if not self.in_range(k):
            return sp.csr_matrix((0, 0))
        return self.gram[k]

    def diff_at(self, k: int) -> sp.csr_matrix:
        """D^k; 次数端点外返回形状正确的零矩阵"""
        if k in self.diff:
            return self.diff[k]
        return sp.csr_matrix((self.dim(k + 1), self.dim(k)))

    def graph_gram(self, k: int) -> sp.csr_matrix:
        """V 内积: M^k + (D^k)ᵀ M^{k+1} D^k"""
        d = self.diff_at(k)
        return (self.gram_at(k) + d.T @ self.gram_at(k + 1) @ d).tocsr()

    def label(self, k: int) -> str:
        return self.labels.get(k, f"W^{k}")

    def check_vector(self, k: int, v: np.ndarray, what: str = "vector") -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.ndim != 1 or v.shape[0] != self.dim(k):
            raise DimensionMismatchError(self.dim(k), int(v.shape[0]) if v.ndim else 0, what)
        return v

    def with_grams(self, gram: Dict[int, sp.csr_matrix], labels: Optional[Dict[int, str]] = None) -> "HilbertComplex":
        """同样的微分, 换一组 Gram 矩阵"""
        return HilbertComplex(
            degrees=self.degrees,
            gram={k: sp.csr_matrix(g) for k, g in gram.items()},
            diff=self.diff,
            labels=dict(labels if labels is not None else self.labels),
            realization=self.realization,
        )


def make_complex(degrees: Tuple[int, int], gram: Dict[int, Any], diff: Dict[int, Any],
                 labels: Optional[Dict[int, str]] = None, realization: Any = None) -> HilbertComplex:
    """
    由稠密或稀疏矩阵构造复形, 统一转成 CSR
    """
    k_min, k_max = int(degrees[0]), int(degrees[1])
    if k_max < k_min:
        raise ShapeMismatchError(k_min, f"empty degree range [{k_min}, {k_max}]")
    grams = {}
    for k in range(k_min, k_max + 1):
        if k not in gram:
            raise ShapeMismatchError(k, "missing Gram matrix")
        grams[k] = sp.csr_matrix(np.atleast_2d(gram[k]) if not sp.issparse(gram[k]) else gram[k], dtype=float)
    diffs = {}
    for k in range(k_min, k_max):
        if k not in diff:
            raise ShapeMismatchError(k, "missing differential")
        d = diff[k]
        if not sp.issparse(d):
            d = np.asarray(d, dtype=float)
            if d.size == 0:
                d = d.reshape(grams[k + 1].shape[0], grams[k].shape[0])
        diffs[k] = sp.csr_matrix(d, dtype=float)
    return HilbertComplex(degrees=(k_min, k_max), gram=grams, diff=diffs,
                          labels=dict(labels or {}), realization=realization)


# ==================== 校验 ====================

@dataclass
class InvariantCheck:
    name: str
    degree: int
    passed: bool
    violation: float
    detail: str = ""


@dataclass
class ValidationReport:
    checks: List[InvariantCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> List[InvariantCheck]:
        return [c for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [
                {"name": c.name, "degree": c.degree, "passed": c.passed,
                 "violation": c.violation, "detail": c.detail}
                for c in self.checks
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        lines = [f"complex validation: {'PASS' if self.passed else 'FAIL'}"]
        for c in self.checks:
            mark = "ok  " if c.passed else "FAIL"
            lines.append(f"  [{mark}] {c.name:<10} k={c.degree:<2} violation={c.violation:.3e} {c.detail}")
        return "\n".join(lines)


def gram_spectrum_bounds(m: sp.csr_matrix) -> Tuple[float, float]:
    """对称化后的最小/最大特征值; 大矩阵走稀疏 Lanczos"""
    sym = 0.5 * (m + m.T)
    if sym.shape[0] <= DENSE_LIMIT:
        eigs = sla.eigvalsh(sym.toarray())
        return float(eigs[0]), float(eigs[-1])
    lam_max = float(eigsh(sym, k=1, which="LA", return_eigenvectors=False)[0])
    lam_min = float(eigsh(sym, k=1, which="SA", tol=1e-10, return_eigenvectors=False)[0])
    return lam_min, lam_max


def _is_integer_matrix(a: sp.csr_matrix) -> bool:
    return bool(np.all(a.data == np.round(a.data)))


def validate_complex(c: HilbertComplex) -> ValidationReport:
    """
    校验复形不变量: 形状链接、Gram 对称正定、D^{k+1} D^k = 0

    形状错误和非正定 Gram 直接抛异常; 对称性和链性质写进报告。
    """
    checks: List[InvariantCheck] = []

    for k in c.degree_range():
        m = c.gram[k]
        if m.shape[0] != m.shape[1]:
            raise ShapeMismatchError(k, f"Gram matrix is {m.shape[0]}x{m.shape[1]}, not square")
    for k in range(c.k_min, c.k_max):
        d = c.diff_at(k)
        if d.shape != (c.dim(k + 1), c.dim(k)):
            raise ShapeMismatchError(
                k, f"D^{k} has shape {d.shape}, expected ({c.dim(k + 1)}, {c.dim(k)})"
            )

    for k in c.degree_range():
        m = c.gram[k]
        if m.shape[0] == 0:
            continue
        scale = max(float(abs(m).max()), np.finfo(float).tiny)
        asym = float(abs(m - m.T).max()) / scale
        checks.append(InvariantCheck("symmetry", k, asym <= SYMMETRY_RTOL, asym))
        lam_min, lam_max = gram_spectrum_bounds(m)
        if lam_min <= SPD_RTOL * max(abs(lam_max), np.finfo(float).tiny):
            raise NonSPDGramError(k, lam_min)
        checks.append(InvariantCheck("spd", k, True, 0.0, f"lambda_min={lam_min:.3e}"))

    for k in range(c.k_min, c.k_max - 1):
        d0 = c.diff_at(k)
        d1 = c.diff_at(k + 1)
        prod = (d1 @ d0).tocsr()
        worst = float(abs(prod).max()) if prod.nnz else 0.0
        if _is_integer_matrix(d0) and _is_integer_matrix(d1):
            checks.append(InvariantCheck("cochain", k, worst == 0.0, worst, "exact"))
        else:
            bound = COCHAIN_RTOL * sparse_norm(d1) * sparse_norm(d0)
            checks.append(InvariantCheck("cochain", k, worst <= bound, worst, f"bound={bound:.3e}"))

    report = ValidationReport(checks)
    if not report.passed:
        logger.warning("[validate_complex] %d invariant(s) failed", len(report.failures()))
    return report


# ==================== JSON 读写 ====================

def _matrix_to_json(a: sp.csr_matrix, dense: bool) -> Any:
    if dense:
        return a.toarray().tolist()
    coo = a.tocoo()
    return {
        "format": "coo",
        "shape": [int(coo.shape[0]), int(coo.shape[1])],
        "row": coo.row.tolist(),
        "col": coo.col.tolist(),
        "data": coo.data.tolist(),
    }


def _matrix_from_json(obj: Any) -> Any:
    if isinstance(obj, dict):
        if obj.get("format") != "coo":
            raise ValueError(f"unsupported matrix format {obj.get('format')!r}")
        return sp.coo_matrix((obj["data"], (obj["row"], obj["col"])), shape=tuple(obj["shape"])).tocsr()
    return np.asarray(obj, dtype=float)


def complex_to_dict(c: HilbertComplex, dense: bool = False) -> dict:
    return {
        "degrees": [c.k_min, c.k_max],
        "labels": {str(k): v for k, v in c.labels.items()},
        "gram": {str(k): _matrix_to_json(c.gram[k], dense) for k in c.degree_range()},
        "diff": {str(k): _matrix_to_json(c.diff_at(k), dense) for k in range(c.k_min, c.k_max)},
    }


def complex_from_dict(data: dict) -> HilbertComplex:
    """
    读取复形 JSON
    Args:
        data: {"degrees": [k_min, k_max], "gram": {k: 矩阵}, "diff": {k: 矩阵}, "labels": {...}}
              矩阵为稠密嵌套列表或 {"format": "coo", "shape", "row", "col", "data"}
    """
    k_min, k_max = data["degrees"]
    gram = {int(k): _matrix_from_json(v) for k, v in data.get("gram", {}).items()}
    diff = {int(k): _matrix_from_json(v) for k, v in data.get("diff", {}).items()}
    labels = {int(k): v for k, v in data.get("labels", {}).items()}
    return make_complex((k_min, k_max), gram, diff, labels)


def load_complex(path: str) -> HilbertComplex:
    with open(Path(path), "r", encoding="utf-8") as f:
        return complex_from_dict(json.load(f))


def save_complex(c: HilbertComplex, path: str, dense: bool = False):
    save_content(path, "json", complex_to_dict(c, dense=dense))
