import numpy as np
import pytest
from scipy.optimize import fsolve

from derham.manufactured import manufactured_problem
from derham.mesh import triangulated_square_mesh, unit_interval_mesh
from derham.whitney import whitney_complex
from hilbert.complex import make_complex
from mixed.solver import solve_mixed_linear
from semilinear.hammerstein import (
    TRACE_HEADER,
    SolverOptions,
    check_strong_monotonicity,
    solution_map_lipschitz_probe,
    solve_hammerstein,
)
from semilinear.nonlinearity import (
    NonlinearityKind,
    check_hemicontinuity,
    check_monotone,
    critical_exponent,
    custom,
    evaluate_F,
    exponential_type,
    from_spec,
    jacobian_F,
    local_lipschitz_guard,
    odd_power,
    polynomial,
    zero_nonlinearity,
)
from utils.errors import LabError, MaxIterationsError, NonMonotoneError, UnsupportedDegreeError


def _scalar_complex():
    """W = ℝ, 无微分: **K** = P_H = I"""
    return make_complex((0, 0), {0: [[1.0]]}, {})


def _cubic():
    return custom(lambda u: u ** 3, jacobian=lambda u: np.diag(3.0 * u ** 2), label="cubic")


# ==================== 非线性项 ====================

def test_pointwise_values_and_derivatives():
    u = np.array([-1.0, 0.0, 2.0])
    np.testing.assert_allclose(odd_power(3).value(u), [-1.0, 0.0, 8.0])
    np.testing.assert_allclose(odd_power(3).derivative(u), [3.0, 0.0, 12.0])
    np.testing.assert_allclose(polynomial([1.0, 0.0, 2.0]).value(u), [3.0, 1.0, 9.0])
    assert exponential_type(2.0, 0.5).derivative(np.zeros(1))[0] == pytest.approx(1.0)
    assert np.all(zero_nonlinearity().value(u) == 0.0)


def test_clamp_freezes_values_outside_interval():
    F = odd_power(3, clamp=(-1.0, 1.0))
    np.testing.assert_allclose(F.value(np.array([2.0, -3.0, 0.5])), [1.0, -1.0, 0.125])
    np.testing.assert_allclose(F.derivative(np.array([2.0, 0.5])), [0.0, 0.75])


def test_invalid_nonlinearities():
    with pytest.raises(LabError):
        odd_power(2)
    with pytest.raises(LabError):
        from_spec({"kind": "exponential_type", "coefficients": [1.0]})
    with pytest.raises(LabError):
        from_spec({"kind": "custom"})
    with pytest.raises(LabError):
        odd_power(3, clamp=(1.0, -1.0))


def test_from_spec_defaults():
    F = from_spec({"kind": "odd_power", "m": 5, "clamp": [-2, 2]})
    assert F.kind == NonlinearityKind.ODD_POWER
    assert F.quad_degree() == 11
    assert F.clamp == (-2, 2)
    assert from_spec({}).kind == NonlinearityKind.ZERO


def test_linear_F_reproduces_mass(rng):
    c = whitney_complex(triangulated_square_mesh(3))
    u = rng.standard_normal(c.dim(0))
    np.testing.assert_allclose(evaluate_F(odd_power(1), c, 0, u), c.gram[0] @ u, atol=1e-13)


def test_cubic_load_of_constant_state():
    c = whitney_complex(unit_interval_mesh(2))
    u = np.full(3, 2.0)
    load = evaluate_F(odd_power(3), c, 0, u)
    np.testing.assert_allclose(load, 8.0 * np.asarray(c.gram_at(0).sum(axis=0)).ravel(), rtol=1e-12)
    refined = evaluate_F(odd_power(3, quadrature_order=15), c, 0, u)
    np.testing.assert_allclose(load, refined, atol=1e-10)


def test_pointwise_F_needs_mesh_and_degree_zero(interval4):
    with pytest.raises(UnsupportedDegreeError):
        evaluate_F(odd_power(3), interval4, 0, np.ones(5))
    c = whitney_complex(unit_interval_mesh(4))
    with pytest.raises(UnsupportedDegreeError):
        evaluate_F(odd_power(3), c, 1, np.ones(4))
    assert np.all(evaluate_F(zero_nonlinearity(), interval4, 1, np.ones(4)) == 0.0)


def test_galerkin_jacobian_matches_finite_differences(rng):
    c = whitney_complex(unit_interval_mesh(6), essential=True)
    F = odd_power(3)
    u = rng.standard_normal(c.dim(0))
    jac = jacobian_F(F, c, 0, u).toarray()
    step = 1e-6
    for j in range(c.dim(0)):
        e = np.zeros(c.dim(0))
        e[j] = step
        column = (evaluate_F(F, c, 0, u + e) - evaluate_F(F, c, 0, u - e)) / (2 * step)
        np.testing.assert_allclose(jac[:, j], column, atol=1e-6)


def test_custom_jacobian_falls_back_to_finite_differences():
    c = _scalar_complex()
    F = custom(lambda u: u ** 3)
    assert jacobian_F(F, c, 0, np.array([2.0])).toarray()[0, 0] == pytest.approx(12.0, rel=1e-5)


def test_monotone_and_hemicontinuity_checks():
    c = whitney_complex(unit_interval_mesh(8), essential=True)
    assert check_monotone(odd_power(3), c, 0, samples=50).passed
    assert check_monotone(exponential_type(1.0, 2.0), c, 0, samples=50).passed
    report = check_monotone(custom(lambda u: -u), c, 0, samples=10)
    assert not report.passed
    assert report.witness is not None
    assert check_hemicontinuity(odd_power(3), c, 0, samples=3, grid=512, jump_tol=0.5).passed


def test_critical_exponent():
    assert critical_exponent(3) == 5.0
    assert critical_exponent(2) == float("inf")


def test_local_lipschitz_guard():
    F = local_lipschitz_guard(odd_power(3), np.zeros(4), radius=1.0, order_interval=(-1.0, 1.0), space_dim=3)
    assert F.clamp == (-1.0, 1.0)
    assert F.lipschitz.constant == pytest.approx(3.0)
    assert F.lipschitz.admissible
    center, radius = F.guard
    assert radius == 1.0
    assert np.all(center == 0.0)
    assert not local_lipschitz_guard(odd_power(7), np.zeros(2), 1.0, (-1.0, 1.0), space_dim=3).lipschitz.admissible
    with pytest.raises(LabError):
        local_lipschitz_guard(exponential_type(1.0, 1.0), np.zeros(2), 1.0)


# ==================== Hammerstein ====================

def test_scalar_cubic_equation():
    c = _scalar_complex()
    sol, state = solve_hammerstein(c, 0, np.array([2.0]), _cubic())
    assert state.converged
    assert sol.bold_u[0] == pytest.approx(1.0, abs=1e-10)
    assert sol.p[0] == pytest.approx(1.0, abs=1e-10)
    assert sol.mixed_residual <= 1e-10


def test_non_monotone_load_is_detected():
    c = _scalar_complex()
    with pytest.raises(NonMonotoneError) as info:
        solve_hammerstein(c, 0, np.array([2.0]), custom(lambda u: -0.5 * u))
    assert info.value.witness is not None


def test_zero_F_reproduces_linear_solve(whitney_family, rng):
    _, c = whitney_family
    for k in c.degree_range():
        f = rng.standard_normal(c.dim(k))
        sol, state = solve_hammerstein(c, k, f, zero_nonlinearity())
        linear = solve_mixed_linear(c, k, f)
        np.testing.assert_allclose(sol.bold_u, linear.bold_u, atol=1e-12 * max(1.0, np.abs(linear.bold_u).max()))
        np.testing.assert_allclose(sol.sigma, linear.sigma, atol=1e-10)
        assert state.iterations <= 1


def test_manufactured_cubic_newton_matches_damped():
    problem = manufactured_problem("interval_cubic", unit_interval_mesh(16))
    c = problem.complex
    damped, d_state = solve_hammerstein(c, 0, problem.load, problem.F, load=True)
    newton, n_state = solve_hammerstein(c, 0, problem.load, problem.F, SolverOptions(strategy="newton"), load=True)
    assert d_state.converged and n_state.converged
    assert n_state.iterations <= d_state.iterations
    np.testing.assert_allclose(newton.bold_u, damped.bold_u, atol=1e-8)
    assert damped.mixed_residual <= 1e-8


def test_manufactured_cubic_matches_dense_newton_oracle():
    problem = manufactured_problem("interval_cubic", unit_interval_mesh(32))
    c = problem.complex
    d = c.diff_at(0).toarray()
    stiffness = d.T @ c.gram_at(1).toarray() @ d

    def residual(u):
        return stiffness @ u + evaluate_F(problem.F, c, 0, u) - problem.load

    def jacobian(u):
        return stiffness + jacobian_F(problem.F, c, 0, u).toarray()

    oracle = fsolve(residual, np.zeros(c.dim(0)), fprime=jacobian, xtol=1e-14)
    assert np.linalg.norm(residual(oracle)) <= 1e-9 * np.linalg.norm(problem.load)
    for options in (SolverOptions(), SolverOptions(strategy="newton")):
        sol, state = solve_hammerstein(c, 0, problem.load, problem.F, options, load=True)
        assert state.converged
        assert np.linalg.norm(sol.bold_u - oracle) <= 1e-8 * np.linalg.norm(oracle)


def test_max_iterations_carries_best_iterate():
    c = whitney_complex(unit_interval_mesh(8), essential=True)
    with pytest.raises(MaxIterationsError) as info:
        solve_hammerstein(c, 0, np.ones(c.dim(0)), odd_power(3), SolverOptions(max_iter=0))
    assert info.value.best_iterate is not None
    assert len(info.value.residual_history) == 1
    assert "strategy='newton'" in str(info.value)


def test_solver_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(tol=0.0)
    with pytest.raises(ValueError):
        SolverOptions(strategy="picard")


def test_clamped_F_is_flagged():
    c = whitney_complex(unit_interval_mesh(8), essential=True)
    sol, _ = solve_hammerstein(c, 0, np.ones(c.dim(0)), odd_power(3, clamp=(-2.0, 2.0)))
    assert "assumes pointwise control" in sol.flags


def test_trace_export(tmp_path):
    c = whitney_complex(unit_interval_mesh(8), essential=True)
    _, state = solve_hammerstein(c, 0, np.ones(c.dim(0)), odd_power(3))
    path = tmp_path / "trace.csv"
    state.export_trace(str(path))
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == ",".join(TRACE_HEADER)
    assert len(lines) == 1 + len(state.history)
    assert state.history[-1] <= 1e-10


def test_strong_monotonicity_of_hammerstein_operator():
    c = whitney_complex(unit_interval_mesh(8), essential=True)
    report = check_strong_monotonicity(c, 0, odd_power(3), samples=100)
    assert report.passed
    assert report.min_ratio >= 1.0 - 1e-10


def test_solution_map_lipschitz_probe(rng):
    c = whitney_complex(unit_interval_mesh(8), essential=True)
    f = rng.standard_normal(c.dim(0))
    g = f + 0.1 * rng.standard_normal(c.dim(0))
    result = solution_map_lipschitz_probe(c, 0, odd_power(3), f, g)
    assert result.norm == "intersection"
    assert 0.0 < result.ratio <= result.bound
    assert not result.violated
    mixed = solution_map_lipschitz_probe(c, 0, odd_power(3), f, g, norm="mixed")
    assert mixed.lipschitz_constant is not None and mixed.lipschitz_constant > 0.0
    same = solution_map_lipschitz_probe(c, 0, odd_power(3), f, f)
    assert same.ratio == 0.0 and not same.violated
    with pytest.raises(ValueError):
        solution_map_lipschitz_probe(c, 0, odd_power(3), f, g, norm="sup")


def test_scalar_cubic_lipschitz_ratio():
    c = _scalar_complex()
    # u + u³ = f: u(2) = 1, u(2.1) ≈ 1.02454
    result = solution_map_lipschitz_probe(c, 0, _cubic(), np.array([2.0]), np.array([2.1]))
    assert result.bound == pytest.approx(1.0, rel=1e-6)
    assert result.ratio == pytest.approx(0.2454, abs=1e-3)
    assert not result.violated


@pytest.mark.parametrize("essential", [True, False])
def test_lipschitz_bound_holds_for_random_pairs(essential, rng):
    c = whitney_complex(unit_interval_mesh(8), essential=essential)
    options = SolverOptions(strategy="newton")
    for _ in range(20):
        f = rng.standard_normal(c.dim(0))
        g = rng.standard_normal(c.dim(0))
        result = solution_map_lipschitz_probe(c, 0, odd_power(3), f, g, options=options)
        assert not result.violated
        assert result.ratio <= result.bound * (1.0 + 1e-8)
