"""
实验配置 (TOML 或 JSON) 的校验模型

文件顶层即 StudyConfig 的字段; 也接受把全部字段放在 [study] 表下的写法。
"""

from typing import Annotated, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from derham.manufactured import get_case
from derham.mesh import EllipseCurve
from semilinear.hammerstein import SolverOptions
from semilinear.nonlinearity import Nonlinearity, from_spec
from utils.errors import ConfigError, LabError, UnknownCaseError
from utils.utils import get_study_config, set_config_path

# 每类实验可用的收敛率断言名
ASSERTION_NAMES = {
    "convergence": {"rate_W", "rate_V"},
    "solve": set(),
    "crime": {"gap_exponent"},
    "coefficients": {"order_delta", "order_eta", "order_mu"},
}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class NonlinearityConfig(_Strict):
    kind: Annotated[Literal["zero", "odd_power", "polynomial", "exponential_type"],
                    Field(description="Kind of the monotone nonlinearity")] = "zero"
    m: Annotated[int, Field(ge=1, description="Odd exponent for odd_power")] = 1
    coefficients: Annotated[List[float], Field(description="Constant coefficients a_j of sum a_j u^j, "
                                                           "or (a, b) for exponential_type")] = []
    clamp: Annotated[Optional[Tuple[float, float]], Field(description="Order interval [lo, hi]")] = None
    quadrature_order: Annotated[Optional[int], Field(gt=0, description="Galerkin quadrature degree")] = None

    @model_validator(mode="after")
    def _check_kind(self):
        if self.kind == "odd_power" and self.m % 2 == 0:
            raise ValueError(f"odd_power needs an odd exponent, got m = {self.m}")
        if self.kind == "polynomial" and not self.coefficients:
            raise ValueError("polynomial needs at least one coefficient")
        if self.kind == "exponential_type" and len(self.coefficients) != 2:
            raise ValueError("exponential_type needs coefficients = [a, b]")
        if self.clamp is not None and self.clamp[0] >= self.clamp[1]:
            raise ValueError(f"clamp interval must satisfy lo < hi, got {list(self.clamp)}")
        try:
            self.build()
        except LabError as e:
            raise ValueError(str(e)) from None
        return self

    def build(self) -> Nonlinearity:
        return from_spec(self.model_dump(exclude_none=True))


class SolverConfig(_Strict):
    tol: Annotated[float, Field(gt=0.0, description="Hammerstein residual tolerance")] = 1e-10
    max_iter: Annotated[int, Field(gt=0)] = 500
    damping: Annotated[float, Field(gt=0.0, le=1.0, description="Initial damping factor")] = 1.0
    strategy: Literal["damped", "newton"] = "damped"
    linear_solver: Literal["direct", "minres"] = "direct"
    assembly_workers: Annotated[int, Field(ge=1)] = 1

    def options(self) -> SolverOptions:
        return SolverOptions(tol=self.tol, max_iter=self.max_iter, damping=self.damping,
                             strategy=self.strategy, linear_solver=self.linear_solver)


class AssertionConfig(_Strict):
    expected: float
    tolerance: Annotated[float, Field(gt=0.0)] = 0.15


class OutputConfig(_Strict):
    dir: Annotated[Optional[str], Field(description="Output directory; defaults to .feeclab/runs")] = None
    gnuplot: bool = True


class CurveConfig(_Strict):
    a: Annotated[float, Field(gt=0.0)] = 1.0
    b: Annotated[float, Field(gt=0.0)] = 1.0

    def build(self) -> EllipseCurve:
        return EllipseCurve(self.a, self.b)


class StudyConfig(_Strict):
    name: Annotated[str, Field(min_length=1, description="Study name, also the output sub-directory")]
    kind: Literal["convergence", "solve", "crime", "coefficients"] = "convergence"
    problem: Annotated[str, Field(description="Manufactured case (interval_linear ... or a-d)")] = "interval_linear"
    degree: Annotated[int, Field(ge=0)] = 0
    family: Literal["interval", "square", "cycle"] = "interval"
    levels: Annotated[List[int], Field(min_length=1, description="Mesh resolutions n, strictly increasing")]
    essential: Annotated[Optional[bool], Field(description="Use the zero-trace subcomplex")] = None
    curve: Optional[CurveConfig] = None
    nonlinearity: Optional[NonlinearityConfig] = None
    data_choice: Literal["optimal", "projected"] = "optimal"
    epsilons: Annotated[List[float], Field(description="Crime magnitudes for the epsilon sweep")] = []
    perturbations: Annotated[List[float], Field(description="Data perturbation sizes at epsilon = 0")] = []
    refinements: Annotated[int, Field(ge=1, description="Levels between the finest mesh and the reference")] = 2
    norms: List[Literal["W", "V", "mixed"]] = ["W", "V"]
    solver: SolverConfig = SolverConfig()
    assertions: Dict[str, AssertionConfig] = {}
    output: OutputConfig = OutputConfig()
    seed: int = 0
    level_workers: Annotated[int, Field(ge=1)] = 1

    @field_validator("levels")
    @classmethod
    def _check_levels(cls, levels: List[int]) -> List[int]:
        if any(n <= 0 for n in levels):
            raise ValueError("levels must be positive")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError("levels must be strictly increasing")
        return levels

    @field_validator("epsilons", "perturbations")
    @classmethod
    def _check_nonnegative(cls, values: List[float]) -> List[float]:
        if any(v < 0.0 for v in values):
            raise ValueError("values must be non-negative")
        return values

    @model_validator(mode="after")
    def _check_kind(self):
        if self.kind in ("convergence", "coefficients") and len(self.levels) < 3:
            raise ValueError(f"{self.kind} studies need at least 3 levels for rate fitting")
        if self.kind == "coefficients" and any(b != 2 * a for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError("coefficient levels must double from one level to the next")
        if self.kind == "crime" and len([e for e in self.epsilons if e > 0.0]) < 2:
            raise ValueError("crime studies need at least two positive epsilons")
        if self.kind in ("convergence", "solve"):
            try:
                case = get_case(self.problem)
            except UnknownCaseError as e:
                raise ValueError(str(e)) from None
            if self.degree != 0:
                raise ValueError("manufactured problems are posed for degree 0")
            expected = "interval" if case.dim == 1 else "square"
            if self.family != expected:
                raise ValueError(f"problem '{case.name}' lives on the {expected} family, not '{self.family}'")
            if self.essential is False:
                raise ValueError("manufactured solutions vanish on the boundary; essential must not be false")
        if self.curve is not None and self.family != "cycle":
            raise ValueError("curve is only meaningful for the cycle family")
        unknown = set(self.assertions) - ASSERTION_NAMES[self.kind]
        if unknown:
            raise ValueError(f"unknown assertions {sorted(unknown)} for {self.kind} studies "
                             f"(expected {sorted(ASSERTION_NAMES[self.kind]) or 'none'})")
        return self

    @property
    def use_essential(self) -> bool:
        """缺省: 制造解问题用零迹子复形, 其余实验只对区间族使用"""
        if self.essential is not None:
            return self.essential
        return self.kind in ("convergence", "solve") or self.family == "interval"

    def build_curve(self) -> Optional[EllipseCurve]:
        return self.curve.build() if self.curve is not None else None

    def build_nonlinearity(self) -> Optional[Nonlinearity]:
        return self.nonlinearity.build() if self.nonlinearity is not None else None

    def with_overrides(self, output_dir: Optional[str] = None, seed: Optional[int] = None,
                       tol: Optional[float] = None) -> "StudyConfig":
        """CLI 全局参数覆盖配置项"""
        update = {}
        if output_dir is not None:
            update["output"] = self.output.model_copy(update={"dir": output_dir})
        if seed is not None:
            update["seed"] = seed
        if tol is not None:
            if tol <= 0.0:
                raise ConfigError([f"--tol: must be positive, got {tol}"])
            update["solver"] = self.solver.model_copy(update={"tol": tol})
        return self.model_copy(update=update)


def _format_errors(err: ValidationError) -> List[str]:
    lines = []
    for item in err.errors():
        loc = ".".join(str(p) for p in ("study", *item["loc"]))
        msg = item["msg"].removeprefix("Value error, ")
        lines.append(f"{loc}: {msg}")
    return lines


def parse_study_config(data: dict) -> StudyConfig:
    """
    校验原始字典

    Raises:
        ConfigError: 每个出错字段一行提示
    """
    if isinstance(data, dict) and isinstance(data.get("study"), dict) and len(data) == 1:
        data = data["study"]
    try:
        return StudyConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_format_errors(e)) from None


def load_study_config(path: str) -> StudyConfig:
    try:
        set_config_path(path)
        data = get_study_config()
    except FileNotFoundError:
        raise ConfigError([f"{path}: file not found"]) from None
    except ValueError as e:
        # tomllib.TOMLDecodeError 与 json.JSONDecodeError 都是 ValueError
        raise ConfigError([f"{path}: cannot parse ({e})"]) from None
    return parse_study_config(data)
