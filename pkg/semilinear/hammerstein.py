"""
抽象 Hammerstein 方程 **u** + **K** F **u** = **K** f 的求解

默认: 阻尼不动点迭代 u ← u - α r, α 从 options.damping 开始按 Armijo 条件折半;
每个接受步检查 A = I + **K**F 在 V∩V* 内积下的强单调性。
可选: 组装的混合非线性系统上的 Newton 法。
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import splu

from hilbert.complex import HilbertComplex
from mixed.saddle import assemble_blocks
from mixed.solver import (
    MixedSolution,
    SolutionOperators,
    data_norm,
    inf_sup_constant,
    mixed_lipschitz_bound,
    solution_from_vector,
    solution_operators,
)
from semilinear.nonlinearity import Nonlinearity, evaluate_F, jacobian_F
from utils.errors import FactorizationError, MaxIterationsError, NonMonotoneError
from utils.save_content import save_content
from utils.utils import get_logger, make_rng, w_norm

logger = get_logger(__name__)

MONOTONE_RTOL = 1e-10
TRACE_HEADER = ["iteration", "residual", "damping"]


@dataclass
class SolverOptions:
    tol: float = 1e-10
    max_iter: int = 500
    damping: float = 1.0
    strategy: str = "damped"            # damped / newton
    linear_solver: str = "direct"       # direct / minres
    check_monotonicity: bool = True
    armijo: float = 1e-4
    min_damping: float = 2.0 ** -30

    def __post_init__(self):
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")
        if self.strategy not in ("damped", "newton"):
            raise ValueError(f"unknown strategy '{self.strategy}' (expected 'damped' or 'newton')")


@dataclass
class HammersteinState:
    iterate: np.ndarray
    residual: float
    iterations: int = 0
    damping: float = 0.0
    converged: bool = False
    history: List[float] = field(default_factory=list)
    dampings: List[float] = field(default_factory=list)

    def to_trace(self) -> dict:
        rows = [[i, r, a] for i, (r, a) in enumerate(zip(self.history, self.dampings))]
        return {"header": TRACE_HEADER, "rows": rows}

    def export_trace(self, path: str):
        save_content(path, "trace", self.to_trace())

    def to_dict(self) -> dict:
        return {
            "residual": self.residual,
            "iterations": self.iterations,
            "damping": self.damping,
            "converged": self.converged,
            "history": list(self.history),
        }


@dataclass
class SemilinearSolution:
    """混合解 (σ, u, p), **u** = u + p, 以及非线性残差诊断"""
    mixed: MixedSolution
    residual: float
    mixed_residual: float
    flags: List[str] = field(default_factory=list)

    @property
    def degree(self) -> int:
        return self.mixed.degree

    @property
    def sigma(self) -> np.ndarray:
        return self.mixed.sigma

    @property
    def u(self) -> np.ndarray:
        return self.mixed.u

    @property
    def p(self) -> np.ndarray:
        return self.mixed.p

    @property
    def bold_u(self) -> np.ndarray:
        return self.mixed.bold_u

    def to_dict(self) -> dict:
        data = self.mixed.to_dict()
        data.update({"residual": self.residual, "mixed_residual": self.mixed_residual, "flags": self.flags})
        return data


# ==================== 求解 ====================

class _Hammerstein:
    """一次求解的局部状态: 载荷 b, **K** b, 以及残差映射"""

    def __init__(self, ops: SolutionOperators, F: Nonlinearity, b: np.ndarray):
        self.ops = ops
        self.F = F
        self.b = b
        self.c = ops.complex
        self.k = ops.degree
        self.gram = self.c.gram_at(self.k)
        self.kb = ops.apply_bold_K(b, load=True)

    def load(self, u: np.ndarray) -> np.ndarray:
        return evaluate_F(self.F, self.c, self.k, u)

    def residual(self, u: np.ndarray) -> np.ndarray:
        """r = u + **K** F(u) - **K** f"""
        return u + self.ops.apply_bold_K(self.load(u), load=True) - self.kb

    def w(self, r: np.ndarray) -> float:
        return w_norm(self.gram, r)

    def check_step(self, u_old: np.ndarray, u_new: np.ndarray, r_old: np.ndarray, r_new: np.ndarray):
        """⟨A u_new - A u_old, Δu⟩ >= (1 - 1e-10)‖Δu‖², V∩V* 内积, 含舍入余量"""
        ops = self.ops
        du = u_new - u_old
        q = ops.intersection_inner(du, du)
        pairing = ops.intersection_inner(r_new - r_old, du)
        scale = 2.0 * (ops.intersection_norm(u_new) + ops.intersection_norm(self.kb)) + ops.intersection_norm(r_new)
        slack = MONOTONE_RTOL * q + 1e3 * np.finfo(float).eps * np.sqrt(max(q, 0.0)) * scale
        if pairing < q - slack:
            raise NonMonotoneError(
                f"strong monotonicity violated: <A u - A v, u - v> = {pairing:.6e} < |u - v|^2 = {q:.6e}",
                witness=(u_old, u_new),
            )


def _damped(problem: _Hammerstein, u: np.ndarray, options: SolverOptions) -> HammersteinState:
    r = problem.residual(u)
    res = problem.w(r)
    state = HammersteinState(iterate=u, residual=res, history=[res], dampings=[0.0])
    while res > options.tol:
        if state.iterations >= options.max_iter:
            raise MaxIterationsError(
                f"damped iteration reached {options.max_iter} iterations (residual {res:.3e}); "
                "try strategy='newton'",
                best_iterate=u, residual_history=state.history,
            )
        alpha = options.damping
        while alpha >= options.min_damping:
            u_new = u - alpha * r
            r_new = problem.residual(u_new)
            res_new = problem.w(r_new)
            if res_new <= (1.0 - options.armijo * alpha) * res:
                break
            alpha *= 0.5
        else:
            raise MaxIterationsError(
                f"line search stalled at iteration {state.iterations} (residual {res:.3e}); "
                "try strategy='newton'",
                best_iterate=u, residual_history=state.history,
            )
        if options.check_monotonicity:
            problem.check_step(u, u_new, r, r_new)
        u, r, res = u_new, r_new, res_new
        state.iterations += 1
        state.history.append(res)
        state.dampings.append(alpha)
        logger.debug("[solve_hammerstein] it=%d residual=%.3e alpha=%g", state.iterations, res, alpha)
    state.iterate, state.residual, state.converged = u, res, True
    state.damping = state.dampings[-1]
    return state


def _newton(problem: _Hammerstein, u0: np.ndarray, options: SolverOptions) -> HammersteinState:
    """混合非线性系统 A x + [0; F(u + Hc); 0] = [0; b; 0] 上的 Newton 法"""
    ops, F, c, k = problem.ops, problem.F, problem.c, problem.k
    system = ops.system
    h = system.harmonic
    rhs = system.rhs(problem.b, load=True)
    x = system.join(np.zeros(system.n_sigma), u0.copy(), np.zeros(system.n_p))

    def bold(x_):
        _, u_, c_ = system.split(x_)
        return u_ + h @ c_

    def nonlinear_residual(x_):
        extra = np.concatenate([np.zeros(system.n_sigma), problem.load(bold(x_)), np.zeros(system.n_p)])
        return system.matrix @ x_ + extra - rhs

    ubar = bold(x)
    res = problem.w(problem.residual(ubar))
    state = HammersteinState(iterate=ubar, residual=res, history=[res], dampings=[0.0])
    big_r = nonlinear_residual(x)
    while res > options.tol:
        if state.iterations >= options.max_iter:
            raise MaxIterationsError(
                f"Newton reached {options.max_iter} iterations (residual {res:.3e})",
                best_iterate=ubar, residual_history=state.history,
            )
        jf = jacobian_F(F, c, k, ubar)
        jac = system.matrix + assemble_blocks({(1, 1): jf, (1, 2): jf @ h}, system.sizes)
        try:
            delta = splu(jac.tocsc()).solve(-big_r)
        except RuntimeError as e:
            raise FactorizationError(f"singular Newton Jacobian at iteration {state.iterations}: {e}") from e
        norm_r = float(np.linalg.norm(big_r))
        alpha = options.damping
        while alpha >= options.min_damping:
            x_new = x + alpha * delta
            r_new = nonlinear_residual(x_new)
            if np.linalg.norm(r_new) <= (1.0 - options.armijo * alpha) * norm_r:
                break
            alpha *= 0.5
        else:
            raise MaxIterationsError(
                f"Newton line search stalled at iteration {state.iterations} (residual {res:.3e})",
                best_iterate=ubar, residual_history=state.history,
            )
        x, big_r = x_new, r_new
        ubar = bold(x)
        res = problem.w(problem.residual(ubar))
        state.iterations += 1
        state.history.append(res)
        state.dampings.append(alpha)
        logger.debug("[solve_hammerstein] newton it=%d residual=%.3e alpha=%g", state.iterations, res, alpha)
    state.iterate, state.residual, state.converged = ubar, res, True
    state.damping = state.dampings[-1]
    return state


def solve_hammerstein(c: HilbertComplex, k: int, f: np.ndarray, F: Nonlinearity,
                      options: Optional[SolverOptions] = None, load: bool = False,
                      ops: Optional[SolutionOperators] = None,
                      u0: Optional[np.ndarray] = None) -> Tuple[SemilinearSolution, HammersteinState]:
    """
    解 **u** + **K** F **u** = **K** f, 再由有效载荷 f - F(**u**) 的线性混合解恢复 (σ, u, p)

    Args:
        c: 复形
        k: 次数
        f: W^k 系数 (load=True 时为载荷)
        F: 单调非线性项
        options: 容差 / 最大迭代数 / 阻尼 / 策略
        ops: 复用的解算子 (含分解)
        u0: 初始迭代, 默认 0
    Returns:
        (SemilinearSolution, HammersteinState)
    """
    options = options or SolverOptions()
    ops = ops if ops is not None else solution_operators(c, k, options.linear_solver)
    f = c.check_vector(k, f, "right-hand side")
    b = f if load else c.gram_at(k) @ f
    problem = _Hammerstein(ops, F, b)
    start = np.zeros(c.dim(k)) if u0 is None else c.check_vector(k, u0, "initial iterate")
    if options.strategy == "newton":
        state = _newton(problem, start, options)
    else:
        state = _damped(problem, start, options)

    system = ops.system
    f_load = problem.load(state.iterate)
    rhs_eff = system.rhs(b - f_load, load=True)
    x = system.solve(rhs_eff, options.linear_solver)
    mixed = solution_from_vector(system, x, rhs_eff, data_norm(c, k, f, load), options.linear_solver)
    rhs = system.rhs(b, load=True)
    extra = np.concatenate([np.zeros(system.n_sigma), problem.load(mixed.bold_u), np.zeros(system.n_p)])
    mixed_residual = system.relative_residual(x, rhs, extra)
    flags = []
    if F.clamp is not None:
        flags.append("assumes pointwise control")
    logger.info("[solve_hammerstein] k=%d %s: %d iterations, residual %.3e, mixed residual %.3e",
                k, options.strategy, state.iterations, state.residual, mixed_residual)
    return SemilinearSolution(mixed=mixed, residual=state.residual, mixed_residual=mixed_residual,
                              flags=flags), state


# ==================== 性质检查 ====================

@dataclass
class StrongMonotonicityReport:
    passed: bool
    min_ratio: float
    samples: int

    def to_dict(self) -> dict:
        return {"passed": self.passed, "min_ratio": self.min_ratio, "samples": self.samples}


def check_strong_monotonicity(c: HilbertComplex, k: int, F: Nonlinearity, samples: int = 100, seed: int = 0,
                              ops: Optional[SolutionOperators] = None) -> StrongMonotonicityReport:
    """
    抽样 min ⟨A u - A v, u - v⟩_{V∩V*} / ‖u - v‖²_{V∩V*}, A = I + **K**F; 通过条件 >= 1 - 1e-10
    """
    ops = ops if ops is not None else solution_operators(c, k)
    rng = make_rng(seed)
    worst = np.inf
    for _ in range(samples):
        u = rng.standard_normal(c.dim(k))
        v = rng.standard_normal(c.dim(k))
        du = u - v
        q = ops.intersection_inner(du, du)
        if q == 0.0:
            continue
        dF = evaluate_F(F, c, k, u) - evaluate_F(F, c, k, v)
        a_diff = du + ops.apply_bold_K(dF, load=True)
        worst = min(worst, ops.intersection_inner(a_diff, du) / q)
    return StrongMonotonicityReport(passed=bool(worst >= 1.0 - MONOTONE_RTOL), min_ratio=float(worst),
                                    samples=samples)


@dataclass
class LipschitzProbe:
    ratio: float
    bound: float
    violated: bool
    norm: str
    lipschitz_constant: Optional[float] = None

    def to_dict(self) -> dict:
        return {"ratio": self.ratio, "bound": self.bound, "violated": self.violated, "norm": self.norm,
                "lipschitz_constant": self.lipschitz_constant}


def _jacobian_constant(F: Nonlinearity, c: HilbertComplex, k: int, points: List[np.ndarray]) -> float:
    """max_u λ_max(J_F(u), M): W 范数下 F 的实测 Lipschitz 常数"""
    m = c.gram_at(k).toarray()
    best = 0.0
    for u in points:
        jac = jacobian_F(F, c, k, u).toarray()
        if jac.size == 0:
            continue
        sym = 0.5 * (jac + jac.T)
        vals = sla.eigh(sym, m, eigvals_only=True)
        best = max(best, float(np.abs(vals).max()))
    return best


def solution_map_lipschitz_probe(c: HilbertComplex, k: int, F: Nonlinearity, f: np.ndarray,
                                 f_prime: np.ndarray, norm: str = "intersection", load: bool = False,
                                 options: Optional[SolverOptions] = None,
                                 ops: Optional[SolutionOperators] = None) -> LipschitzProbe:
    """
    ‖**u** - **u**′‖ / ‖f - f′‖ 与理论上界

    norm='intersection': V∩V* 范数, 上界 ‖**K**‖_{W→V∩V*} = sqrt(‖**K**‖_W)
    norm='mixed': ‖Δσ‖_V + ‖Δu‖_V + ‖Δp‖, 上界 mixed_lipschitz_bound(γ, C, ‖**K**‖_W)
    """
    if norm not in ("intersection", "mixed"):
        raise ValueError(f"unknown norm '{norm}' (expected 'intersection' or 'mixed')")
    options = options or SolverOptions()
    ops = ops if ops is not None else solution_operators(c, k, options.linear_solver)
    norm_k = ops.norm("bold").value

    f = c.check_vector(k, f)
    f_prime = c.check_vector(k, f_prime)
    df = data_norm(c, k, f - f_prime, load)
    if df == 0.0:
        bound = np.sqrt(norm_k) if norm == "intersection" else np.inf
        return LipschitzProbe(ratio=0.0, bound=float(bound), violated=False, norm=norm)

    sol, _ = solve_hammerstein(c, k, f, F, options, load, ops)
    sol_p, _ = solve_hammerstein(c, k, f_prime, F, options, load, ops)
    constant = None
    if norm == "intersection":
        ratio = ops.intersection_norm(sol.bold_u - sol_p.bold_u) / df
        bound = float(np.sqrt(norm_k))
    else:
        diff = MixedSolution(degree=k, sigma=sol.sigma - sol_p.sigma, u=sol.u - sol_p.u,
                             p_coeffs=sol.mixed.p_coeffs - sol_p.mixed.p_coeffs, p=sol.p - sol_p.p,
                             residual_norm=0.0)
        n = diff.norms(c)
        ratio = (n["sigma_V"] + n["u_V"] + n["p_W"]) / df
        if F.lipschitz is not None:
            constant = F.lipschitz.constant
        else:
            constant = _jacobian_constant(F, c, k, [sol.bold_u, sol_p.bold_u])
        bound = mixed_lipschitz_bound(inf_sup_constant(ops.system), constant, norm_k)
    violated = bool(ratio > bound * (1.0 + 1e-8))
    if violated:
        logger.warning("[lipschitz_probe] ratio %.6e exceeds bound %.6e (%s norm)", ratio, bound, norm)
    return LipschitzProbe(ratio=float(ratio), bound=float(bound), violated=violated, norm=norm,
                          lipschitz_constant=constant)
