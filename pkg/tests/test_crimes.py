import numpy as np
import pytest

from crimes.setup import build_nested_pair, modified_harmonic, project_data, synth_crime
from crimes.solve import (
    GAP_HEADER,
    PROXY_FLAG,
    crime_gap,
    crime_sweep,
    data_perturbation_sweep,
    semilinear_crime_solve,
    solve_modified,
    subcomplex_solve,
    triangle_decomposition,
)
from hilbert.hodge import betti_numbers
from semilinear.hammerstein import SolverOptions
from semilinear.nonlinearity import odd_power
from utils.errors import CrimeSynthesisError


@pytest.fixture(scope="module")
def interval_pair():
    return build_nested_pair("interval", 4, levels_up=2)


@pytest.fixture(scope="module")
def square_pair():
    return build_nested_pair("square", 2, levels_up=1)


def _data(v_ref, k, seed=1):
    return np.random.default_rng(seed).standard_normal(v_ref.dim(k))


# ==================== 构造 ====================

def test_zero_epsilon_is_a_true_subcomplex(square_pair):
    v_h, v_ref, morphism = square_pair
    setup = synth_crime(v_h, v_ref, morphism, 0.0)
    assert setup.crime_magnitude <= 1e-12
    assert setup.morphism_violation() <= 1e-14
    for k in v_h.degree_range():
        np.testing.assert_allclose(setup.J[k], np.eye(v_h.dim(k)), atol=1e-11)
        assert setup.consistency_violation(k) <= 1e-12
    assert modified_harmonic(setup, 1).dim == betti_numbers(v_h)[1]


@pytest.mark.parametrize("epsilon", [1e-3, 1e-2, 0.1])
def test_crime_magnitude_tracks_epsilon(square_pair, epsilon):
    v_h, v_ref, morphism = square_pair
    setup = synth_crime(v_h, v_ref, morphism, epsilon, seed=7)
    for k, value in setup.magnitudes.items():
        assert epsilon / (1.0 + epsilon) - 1e-10 <= value <= epsilon / (1.0 - epsilon) + 1e-10
        assert setup.consistency_violation(k) <= 1e-10
    # 微分不动, i_h 仍是链映射
    assert setup.morphism_violation() <= 1e-14


def test_perturbation_is_seeded(interval_pair):
    v_h, v_ref, morphism = interval_pair
    a = synth_crime(v_h, v_ref, morphism, 1e-2, seed=3)
    b = synth_crime(v_h, v_ref, morphism, 1e-2, seed=3)
    for k in v_h.degree_range():
        np.testing.assert_array_equal(a.discrete.gram[k].toarray(), b.discrete.gram[k].toarray())
        assert abs(float(np.abs(a.perturbations[k]).max())) <= 1.0


def test_invalid_crimes(interval_pair):
    v_h, v_ref, morphism = interval_pair
    with pytest.raises(ValueError):
        synth_crime(v_h, v_ref, morphism, -1e-3)
    # 取足够大的 ε 使 I + εS 失去正定性
    s = synth_crime(v_h, v_ref, morphism, 0.0).perturbations
    lam_min = min(float(np.linalg.eigvalsh(s[k]).min()) for k in v_h.degree_range())
    assert lam_min < 0.0
    with pytest.raises(CrimeSynthesisError):
        synth_crime(v_h, v_ref, morphism, -2.0 / lam_min)
    with pytest.raises(ValueError):
        build_nested_pair("interval", 4, levels_up=0)


def test_project_data_modes(interval_pair):
    v_h, v_ref, morphism = interval_pair
    setup = synth_crime(v_h, v_ref, morphism, 0.0)
    x = np.random.default_rng(2).standard_normal(v_h.dim(0))
    f_ref = morphism.inject[0] @ x
    adjoint = project_data(setup, 0, f_ref, discrepancy=True)
    np.testing.assert_allclose(adjoint.f_h, x, atol=1e-11)
    assert adjoint.discrepancy <= 1e-11
    interp = project_data(setup, 0, f_ref, mode="interpolation")
    np.testing.assert_allclose(interp.f_h, x, atol=1e-14)
    assert interp.discrepancy is None
    with pytest.raises(ValueError):
        project_data(setup, 0, f_ref, mode="l2")


# ==================== 修正问题 ====================

@pytest.mark.parametrize("k", [0, 1])
def test_modified_problem_matches_subcomplex_assembly(square_pair, k):
    v_h, v_ref, morphism = square_pair
    setup = synth_crime(v_h, v_ref, morphism, 5e-2, seed=1)
    f_ref = _data(v_ref, k)
    modified = solve_modified(setup, k, f_ref)
    direct = subcomplex_solve(setup, k, f_ref)
    scale = max(1.0, np.abs(direct.bold_u).max())
    np.testing.assert_allclose(modified.bold_u, direct.bold_u, atol=1e-9 * scale)
    np.testing.assert_allclose(modified.sigma, direct.sigma, atol=1e-9 * scale)


def test_gap_vanishes_without_crime(interval_pair):
    v_h, v_ref, morphism = interval_pair
    setup = synth_crime(v_h, v_ref, morphism, 0.0)
    report = crime_gap(setup, 0, _data(v_ref, 0))
    assert report.gap < 1e-9
    assert report.bound_f_term < 1e-12
    assert list(report.to_dict()) == GAP_HEADER


def test_gap_is_first_order_in_epsilon(interval_pair):
    v_h, v_ref, morphism = interval_pair
    f_ref = _data(v_ref, 0)
    sweep = crime_sweep(v_h, v_ref, morphism, 0, f_ref, [1e-2, 5e-3, 2.5e-3, 0.0])
    assert sweep.exponent == pytest.approx(1.0, abs=0.15)
    assert sweep.rows[-1].gap < 1e-9
    assert all(r.ratio >= 0.0 and np.isfinite(r.ratio) for r in sweep.rows)
    csv = sweep.to_csv()
    assert csv["header"] == GAP_HEADER
    assert len(csv["rows"]) == 4


def test_parallel_sweep_matches_serial(interval_pair):
    v_h, v_ref, morphism = interval_pair
    f_ref = _data(v_ref, 1)
    eps = [1e-2, 5e-3, 2.5e-3]
    serial = crime_sweep(v_h, v_ref, morphism, 1, f_ref, eps)
    parallel = crime_sweep(v_h, v_ref, morphism, 1, f_ref, eps, workers=3)
    np.testing.assert_allclose([r.row() for r in parallel.rows], [r.row() for r in serial.rows], rtol=1e-12)


def test_data_perturbation_is_linear(interval_pair):
    v_h, v_ref, morphism = interval_pair
    setup = synth_crime(v_h, v_ref, morphism, 0.0)
    rows = data_perturbation_sweep(setup, 0, _data(v_ref, 0), [1e-2, 1e-3, 1e-4])
    constants = [r.constant for r in rows]
    assert constants[0] > 0.0
    np.testing.assert_allclose(constants, constants[0], rtol=1e-5)


def test_triangle_decomposition_holds(square_pair):
    v_h, v_ref, morphism = square_pair
    setup = synth_crime(v_h, v_ref, morphism, 1e-2)
    report = triangle_decomposition(setup, 1, _data(v_ref, 1))
    assert report.holds
    assert report.flags == [PROXY_FLAG]
    assert report.total > 0.0


# ==================== 半线性 ====================

def test_semilinear_crime_choices():
    v_h, v_ref, morphism = build_nested_pair("interval", 4, levels_up=1, essential=True)
    setup = synth_crime(v_h, v_ref, morphism, 0.0)
    f_ref = _data(v_ref, 0)
    optimal = semilinear_crime_solve(setup, 0, f_ref, odd_power(3))
    assert PROXY_FLAG in optimal.flags
    assert optimal.data_discrepancy <= 1e-12
    assert optimal.F_discrepancy <= 1e-12
    assert optimal.gap <= 1e-7
    assert optimal.total >= optimal.best_approx * (1.0 - 1e-6)
    # Π_h F i_h 不保证单调, 关掉逐步检查
    projected = semilinear_crime_solve(setup, 0, f_ref, odd_power(3), choice="projected",
                                       options=SolverOptions(check_monotonicity=False))
    assert projected.data_discrepancy > 0.0
    assert set(projected.to_dict()) >= {"choice", "total", "gap", "best_approx", "flags"}
    with pytest.raises(ValueError):
        semilinear_crime_solve(setup, 0, f_ref, odd_power(3), choice="lumped")
