import pytest

from lab.config import load_study_config, parse_study_config
from semilinear.nonlinearity import NonlinearityKind
from utils.errors import ConfigError


def _problems(data):
    with pytest.raises(ConfigError) as info:
        parse_study_config(data)
    return info.value.problems


@pytest.mark.parametrize("name", [
    "interval_linear.toml",
    "interval_cubic.toml",
    "square_linear.toml",
    "square_cubic.toml",
    "solve_cubic.toml",
    "crime_interval.toml",
    "coeffs_interval.json",
    "coeffs_cycle.toml",
])
def test_shipped_configs_are_valid(configs_dir, name):
    config = load_study_config(str(configs_dir / name))
    assert config.name == name.split(".")[0]


def test_example_config_is_valid(configs_dir):
    config = load_study_config(str(configs_dir.parent / "config.example.toml"))
    assert config.kind == "convergence"
    assert set(config.assertions) == {"rate_W", "rate_V"}


def test_defaults():
    config = parse_study_config({"name": "x", "levels": [4, 8, 16]})
    assert config.kind == "convergence"
    assert config.problem == "interval_linear"
    assert config.solver.tol == 1e-10
    assert config.norms == ["W", "V"]
    assert config.build_nonlinearity() is None
    assert config.build_curve() is None


def test_use_essential_defaults():
    assert parse_study_config({"name": "x", "levels": [4, 8, 16]}).use_essential
    crime = {"name": "x", "kind": "crime", "levels": [4], "epsilons": [1e-2, 1e-3]}
    assert parse_study_config(crime).use_essential
    assert not parse_study_config({**crime, "family": "square"}).use_essential
    assert not parse_study_config({**crime, "essential": False}).use_essential


def test_nested_study_table():
    config = parse_study_config({"study": {"name": "x", "levels": [4, 8, 16]}})
    assert config.name == "x"


def test_nonlinearity_section():
    config = parse_study_config({"name": "x", "problem": "b", "levels": [4, 8, 16],
                                 "nonlinearity": {"kind": "odd_power", "m": 5, "clamp": [-1.0, 1.0]}})
    F = config.build_nonlinearity()
    assert F.kind == NonlinearityKind.ODD_POWER
    assert F.m == 5
    assert "study.nonlinearity: odd_power needs an odd exponent, got m = 4" in _problems(
        {"name": "x", "levels": [4, 8, 16], "nonlinearity": {"kind": "odd_power", "m": 4}})


def test_field_errors_are_located():
    assert "study.levels: levels must be strictly increasing" in _problems({"name": "x", "levels": [8, 4, 16]})
    problems = _problems({"name": "x", "levels": [4, 8, 16], "colour": "red"})
    assert any(p.startswith("study.colour:") for p in problems)
    problems = _problems({"levels": [4, 8, 16], "solver": {"tol": -1.0}})
    assert any(p.startswith("study.name:") for p in problems)
    assert any(p.startswith("study.solver.tol:") for p in problems)


@pytest.mark.parametrize("data, fragment", [
    ({"name": "x", "levels": [4, 8]}, "at least 3 levels"),
    ({"name": "x", "kind": "coefficients", "levels": [4, 6, 12]}, "must double"),
    ({"name": "x", "kind": "crime", "levels": [4], "epsilons": [1e-2, 0.0]}, "two positive epsilons"),
    ({"name": "x", "problem": "annulus", "levels": [4, 8, 16]}, "annulus"),
    ({"name": "x", "problem": "square_linear", "levels": [4, 8, 16]}, "square family"),
    ({"name": "x", "levels": [4, 8, 16], "essential": False}, "essential must not be false"),
    ({"name": "x", "levels": [4, 8, 16], "curve": {"a": 1.0, "b": 0.5}}, "cycle family"),
    ({"name": "x", "levels": [4, 8, 16], "assertions": {"gap_exponent": {"expected": 1.0}}}, "unknown assertions"),
])
def test_model_errors(data, fragment):
    problems = _problems(data)
    assert any(fragment in p and p.startswith("study") for p in problems)


def test_overrides():
    config = parse_study_config({"name": "x", "levels": [4, 8, 16]})
    changed = config.with_overrides(output_dir="runs", seed=3, tol=1e-8)
    assert changed.output.dir == "runs"
    assert changed.seed == 3
    assert changed.solver.tol == 1e-8
    assert config.seed == 0
    with pytest.raises(ConfigError):
        config.with_overrides(tol=0.0)


def test_file_errors(tmp_path):
    with pytest.raises(ConfigError) as info:
        load_study_config(str(tmp_path / "missing.toml"))
    assert "file not found" in info.value.problems[0]
    broken = tmp_path / "broken.toml"
    broken.write_text("name = \n", encoding="utf-8")
    with pytest.raises(ConfigError) as info:
        load_study_config(str(broken))
    assert "cannot parse" in info.value.problems[0]
