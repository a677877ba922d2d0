"""
加密实验: 逐层求解, 误差, 收敛率拟合, CSV / manifest / gnuplot 产物

输出目录结构 <output_dir>/<study name>/
    levels.csv | gaps.csv | coefficients.csv   逐层 (或逐 ε) 数据, 逐字节可复现
    manifest.json                              配置哈希, 版本, 种子, 用时, 拟合结果
    plot.gp                                    log-log 图脚本
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from crimes.setup import build_nested_pair, synth_crime
from crimes.solve import GAP_HEADER, crime_sweep, data_perturbation_sweep, semilinear_crime_solve
from derham.manufactured import error_norms, manufactured_problem
from derham.mesh import family_mesh
from derham.quadrature import interpolate_vertex
from hilbert.complex import HilbertComplex
from lab.coefficients import CoefficientReport, coefficient_family, measure_coefficients
from lab.config import StudyConfig
from lab.rates import MonotoneFlag, RateCheck, RateFit, monotone_flag, windowed_fit
from mixed.solver import MixedSolution, solve_mixed_linear
from semilinear.hammerstein import HammersteinState, solve_hammerstein
from semilinear.nonlinearity import NonlinearityKind
from utils.errors import LabError
from utils.save_content import config_hash, gnuplot_script, save_content
from utils.utils import get_logger, get_output_dir, make_rng, package_versions, w_norm

logger = get_logger(__name__)

LEVELS_SCHEMA = "feeclab.levels/1"
LEVEL_HEADER = ["level", "h", "dofs", "err_W", "err_V", "err_sigma_V", "err_p", "iters", "residual"]
PERTURBATION_HEADER = ["delta", "gap", "constant"]

EventCallback = Callable[[Dict[str, Any]], None]


@dataclass
class RateReport:
    """
    一次实验的汇总

    rates 按范数 (W / V / mixed) 或量名 (gap, delta, eta, mu) 索引; 误差含零时对应拟合为 None
    """
    name: str
    kind: str
    header: List[str]
    rows: List[list]
    hs: List[float]
    errors: Dict[str, List[float]]
    rates: Dict[str, Optional[RateFit]]
    monotone: Dict[str, MonotoneFlag] = field(default_factory=dict)
    checks: List[RateCheck] = field(default_factory=list)
    coefficients: Optional[CoefficientReport] = None
    output_dir: Optional[str] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def slope(self, name: str) -> Optional[float]:
        fit = self.rates.get(name)
        return fit.slope if fit is not None else None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "hs": self.hs,
            "errors": self.errors,
            "rates": {k: (v.to_dict() if v is not None else None) for k, v in self.rates.items()},
            "monotone": {k: v.to_dict() for k, v in self.monotone.items()},
            "checks": [c.to_dict() for c in self.checks],
            "passed": self.passed,
            "coefficients": self.coefficients.to_dict() if self.coefficients is not None else None,
            "extra": self.extra,
        }


# ==================== 产物 ====================

def study_dir(config: StudyConfig) -> Path:
    base = Path(config.output.dir) if config.output.dir else Path(get_output_dir())
    return base / config.name


def _emit(on_event: Optional[EventCallback], **event):
    if on_event is not None:
        on_event(event)


def _write_artifacts(config: StudyConfig, csv_name: str, header: List[str], rows: List[list],
                     x_column: str, y_columns: List[str], started: float, status: str = "ok",
                     report: Optional[RateReport] = None, error: Optional[str] = None,
                     extra_files: Optional[List[str]] = None) -> str:
    out = study_dir(config)
    save_content(str(out / csv_name), "csv", {"header": header, "rows": rows})
    files = [csv_name] + list(extra_files or [])
    if config.output.gnuplot and rows:
        script = gnuplot_script(csv_name, x_column, y_columns, header, config.name)
        save_content(str(out / "plot.gp"), "gnuplot", script)
        files.append("plot.gp")
    dumped = config.model_dump(mode="json")
    manifest = {
        "schema": LEVELS_SCHEMA,
        "name": config.name,
        "kind": config.kind,
        "status": status,
        "config": dumped,
        "config_hash": config_hash(dumped),
        "versions": package_versions(),
        "seed": config.seed,
        "wall_time": round(time.perf_counter() - started, 3),
        "files": files,
    }
    if report is not None:
        manifest["report"] = report.to_dict()
    if error is not None:
        manifest["error"] = error
    save_content(str(out / "manifest.json"), "manifest", manifest)
    return str(out)


def _checks(config: StudyConfig, measured: Dict[str, Optional[float]]) -> List[RateCheck]:
    return [RateCheck(name=name, measured=measured.get(name), expected=spec.expected, tolerance=spec.tolerance)
            for name, spec in sorted(config.assertions.items())]


# ==================== 人造解加密实验 ====================

@dataclass
class LevelResult:
    row: list
    solution: MixedSolution
    state: Optional[HammersteinState] = None
    complex: Optional[HilbertComplex] = None


def run_level(config: StudyConfig, level: int, n: int) -> LevelResult:
    """
    一层网格上的人造解求解与误差

    Returns:
        LevelResult, row 按 LEVEL_HEADER 排列
    """
    mesh = family_mesh(config.family, n)
    problem = manufactured_problem(config.problem, mesh, 0, config.build_nonlinearity(),
                                   essential=config.use_essential, workers=config.solver.assembly_workers)
    c = problem.complex
    state = None
    if problem.F.kind == NonlinearityKind.ZERO:
        solution = solve_mixed_linear(c, 0, problem.load, load=True, method=config.solver.linear_solver)
        iters, residual = 0, solution.residual_norm
    else:
        semilinear, state = solve_hammerstein(c, 0, problem.load, problem.F, config.solver.options(), load=True)
        solution = semilinear.mixed
        iters, residual = state.iterations, semilinear.mixed_residual
    errs = error_norms(c, solution.bold_u, problem.exact, problem.grad_exact)
    # 零迹问题的精确 σ 与 p 都为零
    err_sigma = w_norm(c.graph_gram(-1), solution.sigma) if solution.sigma.size else 0.0
    err_p = w_norm(c.gram_at(0), solution.p)
    row = [level, float(mesh.h), c.dim(0), errs["W"], errs["V"], err_sigma, err_p, iters, residual]
    logger.info("[run_level] %s n=%d: err_W %.3e err_V %.3e (%d iterations)",
                config.name, n, errs["W"], errs["V"], iters)
    return LevelResult(row=row, solution=solution, state=state, complex=c)


def _level_errors(rows: List[list]) -> Dict[str, List[float]]:
    col = {name: i for i, name in enumerate(LEVEL_HEADER)}
    errors = {"W": [r[col["err_W"]] for r in rows], "V": [r[col["err_V"]] for r in rows]}
    errors["mixed"] = [r[col["err_sigma_V"]] + r[col["err_V"]] + r[col["err_p"]] for r in rows]
    return errors


def run_study(config: StudyConfig, on_event: Optional[EventCallback] = None) -> RateReport:
    """
    逐层求解人造解问题并拟合收敛率

    任何一层失败都会中止实验, 已完成的层照常写出, manifest 标记为 failed, 然后重新抛出异常
    """
    started = time.perf_counter()
    _emit(on_event, type="start", study=config.name, total=len(config.levels), header=LEVEL_HEADER)
    rows: List[list] = []
    jobs = list(enumerate(config.levels, start=1))
    try:
        if config.level_workers > 1:
            with ThreadPoolExecutor(max_workers=config.level_workers) as pool:
                # map 按提交顺序返回, 行序与层序一致
                for result in pool.map(lambda job: run_level(config, *job), jobs):
                    rows.append(result.row)
                    _emit(on_event, type="level", row=dict(zip(LEVEL_HEADER, result.row)))
        else:
            for level, n in jobs:
                result = run_level(config, level, n)
                rows.append(result.row)
                _emit(on_event, type="level", row=dict(zip(LEVEL_HEADER, result.row)))
    except LabError as e:
        _write_artifacts(config, "levels.csv", LEVEL_HEADER, rows, "h", ["err_W", "err_V"], started,
                         status="failed", error=str(e))
        _emit(on_event, type="failed", error=str(e))
        raise

    hs = [r[1] for r in rows]
    errors = _level_errors(rows)
    rates = {norm: windowed_fit(hs, errors[norm]) for norm in config.norms}
    monotone = {norm: monotone_flag(errors[norm]) for norm in config.norms}
    measured = {f"rate_{norm}": (fit.slope if fit is not None else None) for norm, fit in rates.items()}
    report = RateReport(name=config.name, kind=config.kind, header=LEVEL_HEADER, rows=rows, hs=hs,
                        errors={norm: errors[norm] for norm in config.norms}, rates=rates, monotone=monotone,
                        checks=_checks(config, measured))
    report.output_dir = _write_artifacts(config, "levels.csv", LEVEL_HEADER, rows, "h", ["err_W", "err_V"],
                                         started, report=report)
    _emit(on_event, type="done", report=report)
    return report


def run_single_solve(config: StudyConfig, on_event: Optional[EventCallback] = None) -> RateReport:
    """第一层网格上的单次求解; 写出 solution.json, 半线性时另写 trace.csv"""
    started = time.perf_counter()
    _emit(on_event, type="start", study=config.name, total=1, header=LEVEL_HEADER)
    result = run_level(config, 1, config.levels[0])
    _emit(on_event, type="level", row=dict(zip(LEVEL_HEADER, result.row)))
    out = study_dir(config)
    payload = result.solution.to_dict()
    payload["errors"] = dict(zip(LEVEL_HEADER[3:7], result.row[3:7]))
    save_content(str(out / "solution.json"), "json", payload)
    files = ["solution.json"]
    if result.state is not None:
        result.state.export_trace(str(out / "trace.csv"))
        files.append("trace.csv")
    errors = _level_errors([result.row])
    report = RateReport(name=config.name, kind="solve", header=LEVEL_HEADER, rows=[result.row],
                        hs=[result.row[1]], errors={norm: errors[norm] for norm in config.norms}, rates={},
                        extra={"solution": payload})
    report.output_dir = _write_artifacts(config, "levels.csv", LEVEL_HEADER, [result.row], "h",
                                         ["err_W", "err_V"], started, report=report, extra_files=files)
    _emit(on_event, type="done", report=report)
    return report


# ==================== 变分犯罪 ====================

def reference_data(c: HilbertComplex, k: int, seed: int = 0) -> np.ndarray:
    """
    参考复形上的数据 f: k = 0 且有网格时取光滑函数的顶点插值, 否则取固定种子的随机向量
    """
    real = c.realization
    if k == 0 and real is not None:
        def fn(x):
            return np.sin(np.pi * x[..., 0]) * np.cos(0.5 * np.pi * x[..., -1]) + 0.5

        return real.gather(0, interpolate_vertex(real.mesh, fn))
    return make_rng(seed).standard_normal(c.dim(k))


def run_crime_study(config: StudyConfig, on_event: Optional[EventCallback] = None) -> RateReport:
    """
    固定网格上的 ε 扫描: 间隙对 ε 的拟合指数; 可选数据扰动扫描与半线性犯罪求解
    """
    started = time.perf_counter()
    k = config.degree
    _emit(on_event, type="start", study=config.name, total=len(config.epsilons), header=GAP_HEADER)
    v_h, v_ref, morphism = build_nested_pair(config.family, config.levels[0], config.refinements,
                                             essential=config.use_essential, curve=config.build_curve(),
                                             workers=config.solver.assembly_workers)
    f_ref = reference_data(v_ref, k, config.seed)
    F = config.build_nonlinearity()
    if F is not None and F.kind == NonlinearityKind.ZERO:
        F = None
    options = config.solver.options()
    sweep = crime_sweep(v_h, v_ref, morphism, k, f_ref, config.epsilons, seed=config.seed, F=F,
                        options=options, workers=config.level_workers)
    rows = [r.row() for r in sweep.rows]
    for row in rows:
        _emit(on_event, type="level", row=dict(zip(GAP_HEADER, row)))

    extra: Dict[str, Any] = {"h": float(morphism.coarse.h), "reference_h": float(morphism.fine.h)}
    files = []
    if config.perturbations:
        setup0 = synth_crime(v_h, v_ref, morphism, 0.0, config.seed)
        perturbed = data_perturbation_sweep(setup0, k, f_ref, config.perturbations, config.seed)
        save_content(str(study_dir(config) / "perturbation.csv"), "csv",
                     {"header": PERTURBATION_HEADER, "rows": [[p.delta, p.gap, p.constant] for p in perturbed]})
        files.append("perturbation.csv")
        extra["perturbation_constants"] = [p.constant for p in perturbed]
    if F is not None:
        eps = min(e for e in config.epsilons if e > 0.0)
        setup = synth_crime(v_h, v_ref, morphism, eps, config.seed)
        extra["semilinear"] = semilinear_crime_solve(setup, k, f_ref, F, config.data_choice, options).to_dict()

    positive = [r for r in sweep.rows if r.epsilon > 0.0]
    fit = None
    if np.isfinite(sweep.exponent):
        fit = RateFit(slope=sweep.exponent, stderr=sweep.stderr, intercept=float("nan"), points=len(positive))
    report = RateReport(name=config.name, kind="crime", header=GAP_HEADER, rows=rows,
                        hs=[r.epsilon for r in sweep.rows], errors={"gap": [r.gap for r in sweep.rows]},
                        rates={"gap": fit}, checks=_checks(config, {"gap_exponent": sweep.exponent}), extra=extra)
    report.output_dir = _write_artifacts(config, "gaps.csv", GAP_HEADER, rows, "epsilon", ["gap"], started,
                                         report=report, extra_files=files)
    _emit(on_event, type="done", report=report)
    return report


# ==================== 逼近系数 ====================

def run_coeff_study(config: StudyConfig, on_event: Optional[EventCallback] = None) -> RateReport:
    """嵌套网格族上测 δ, η, μ 与衰减阶"""
    started = time.perf_counter()
    _emit(on_event, type="start", study=config.name, total=len(config.levels), header=None)
    fine, morphisms = coefficient_family(config.family, config.levels, config.refinements,
                                         essential=config.use_essential, curve=config.build_curve(),
                                         workers=config.solver.assembly_workers)
    coeffs = measure_coefficients(fine, morphisms, config.degree, seed=config.seed)
    table = coeffs.to_csv()
    for row in table["rows"]:
        _emit(on_event, type="level", row=dict(zip(table["header"], row)))
    measured = {f"order_{name}": (fit.slope if fit is not None else None) for name, fit in coeffs.orders.items()}
    report = RateReport(name=config.name, kind="coefficients", header=table["header"], rows=table["rows"],
                        hs=[r.h for r in coeffs.rows],
                        errors={name: coeffs.values(name) for name in ("delta", "eta", "mu")},
                        rates=dict(coeffs.orders), monotone=dict(coeffs.monotone),
                        checks=_checks(config, measured), coefficients=coeffs,
                        extra={"fine_h": float(fine.realization.mesh.h)})
    report.output_dir = _write_artifacts(config, "coefficients.csv", table["header"], table["rows"], "h",
                                         ["delta", "eta", "mu"], started, report=report)
    _emit(on_event, type="done", report=report)
    return report


RUNNERS: Dict[str, Callable[..., RateReport]] = {
    "convergence": run_study,
    "solve": run_single_solve,
    "crime": run_crime_study,
    "coefficients": run_coeff_study,
}


def run_config(config: StudyConfig, on_event: Optional[EventCallback] = None) -> Tuple[RateReport, bool]:
    report = RUNNERS[config.kind](config, on_event)
    return report, report.passed
