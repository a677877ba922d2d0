import numpy as np
import pytest

from derham.mesh import triangulated_square_mesh, unit_interval_mesh
from derham.whitney import whitney_complex
from hilbert.complex import make_complex
from hilbert.hodge import hodge_decompose
from mixed.power import power_norm
from mixed.saddle import assemble_mixed
from mixed.solver import (
    bold_L_matrix,
    inf_sup_constant,
    intersection_gram,
    mixed_lipschitz_bound,
    operator_norm_K,
    solution_operators,
    solve_mixed_linear,
    stability_report,
    unmixed_solve,
)
from utils.errors import ConvergenceError, DegreeOutOfRangeError, DimensionMismatchError


def _diag_complex():
    """D = diag(1, 2), 单位 Gram: **L** 在 k = 1 为 diag(1, 4)"""
    return make_complex((0, 1), {0: np.eye(2), 1: np.eye(2)}, {0: np.diag([1.0, 2.0])})


# ==================== 组装 ====================

def test_block_sizes(interval4):
    assert assemble_mixed(interval4, 0).sizes == (0, 5, 1)
    assert assemble_mixed(interval4, 1).sizes == (5, 4, 0)
    with pytest.raises(DegreeOutOfRangeError):
        assemble_mixed(interval4, 2)


def test_symmetric_form_differs_only_in_first_row(cycle4):
    system = assemble_mixed(cycle4, 1)
    a = system.matrix.toarray()
    s = system.symmetric.toarray()
    n = system.n_sigma
    np.testing.assert_array_equal(s[:n], -a[:n])
    np.testing.assert_array_equal(s[n:], a[n:])
    np.testing.assert_allclose(s, s.T, atol=1e-15)


def test_bilinear_form_matches_blocks(cycle4, rng):
    system = assemble_mixed(cycle4, 1)
    x = rng.standard_normal(system.shape[0])
    y = rng.standard_normal(system.shape[0])
    assert system.bilinear(x, y) == pytest.approx(float(y @ (system.matrix @ x)))


# ==================== 线性求解 ====================

def test_zero_data_gives_zero_solution(whitney_family):
    _, c = whitney_family
    for k in c.degree_range():
        sol = solve_mixed_linear(c, k, np.zeros(c.dim(k)))
        assert np.all(sol.sigma == 0.0)
        assert np.all(sol.u == 0.0)
        assert np.all(sol.p == 0.0)
        assert sol.stability_ratio == 0.0


def test_harmonic_data_is_returned_as_p(cycle4):
    h = np.array([0.5, 0.5, 0.5, -0.5])
    sol = solve_mixed_linear(cycle4, 1, h)
    np.testing.assert_allclose(sol.sigma, 0.0, atol=1e-12)
    np.testing.assert_allclose(sol.u, 0.0, atol=1e-12)
    np.testing.assert_allclose(sol.p, h, atol=1e-12)


def test_solution_satisfies_mixed_equations(whitney_family, rng):
    _, c = whitney_family
    for k in c.degree_range():
        f = rng.standard_normal(c.dim(k))
        sol = solve_mixed_linear(c, k, f)
        assert sol.residual_norm <= 1e-10
        # u 与 H 正交, p 是 f 的调和部分
        dec = hodge_decompose(c, k, f)
        np.testing.assert_allclose(sol.p, dec.harmonic_part, atol=1e-9)
        h = assemble_mixed(c, k).harmonic
        assert np.abs(h.T @ (c.gram_at(k) @ sol.u)).max(initial=0.0) <= 1e-9


def test_mixed_and_unmixed_agree(whitney_family, rng):
    _, c = whitney_family
    for k in c.degree_range():
        for _ in range(20):
            f = rng.standard_normal(c.dim(k))
            sol = solve_mixed_linear(c, k, f)
            bold = unmixed_solve(c, k, f)
            np.testing.assert_allclose(sol.bold_u, bold, atol=1e-9 * max(1.0, np.abs(bold).max()))


def test_load_form_matches_coefficient_form(interval4, rng):
    f = rng.standard_normal(5)
    a = solve_mixed_linear(interval4, 0, f)
    b = solve_mixed_linear(interval4, 0, interval4.gram[0] @ f, load=True)
    np.testing.assert_allclose(a.bold_u, b.bold_u, atol=1e-12)


def test_solve_is_linear(rng):
    c = whitney_complex(triangulated_square_mesh(2))
    ops = solution_operators(c, 1)
    f, g = rng.standard_normal(c.dim(1)), rng.standard_normal(c.dim(1))
    lhs = ops.apply_bold_K(2.0 * f - g)
    rhs = 2.0 * ops.apply_bold_K(f) - ops.apply_bold_K(g)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_minres_matches_direct(rng):
    c = whitney_complex(triangulated_square_mesh(3))
    f = rng.standard_normal(c.dim(1))
    direct = solve_mixed_linear(c, 1, f)
    iterative = solve_mixed_linear(c, 1, f, method="minres")
    np.testing.assert_allclose(iterative.bold_u, direct.bold_u, atol=1e-8)
    with pytest.raises(ValueError):
        solve_mixed_linear(c, 1, f, method="cg")


def test_wrong_rhs_length(interval4):
    with pytest.raises(DimensionMismatchError):
        solve_mixed_linear(interval4, 0, np.ones(4))


# ==================== 解算子 ====================

def test_bold_L_inverts_bold_K(whitney_family, rng):
    _, c = whitney_family
    for k in c.degree_range():
        f = rng.standard_normal(c.dim(k))
        ops = solution_operators(c, k)
        x = ops.apply_bold_K(f)
        np.testing.assert_allclose(ops.apply_bold_L(x), f, atol=1e-8 * np.abs(f).max())
        np.testing.assert_allclose(bold_L_matrix(c, k) @ x, f, atol=1e-8 * np.abs(f).max())


def test_intersection_gram_is_spd(whitney_family):
    _, c = whitney_family
    for k in c.degree_range():
        g = intersection_gram(c, k)
        np.testing.assert_allclose(g, g.T, atol=1e-12)
        assert np.linalg.eigvalsh(g).min() > 0.0


def test_intersection_inner_matches_dense_gram(rng):
    c = whitney_complex(triangulated_square_mesh(2))
    ops = solution_operators(c, 1)
    x, y = rng.standard_normal(c.dim(1)), rng.standard_normal(c.dim(1))
    assert ops.intersection_inner(x, y) == pytest.approx(float(y @ intersection_gram(c, 1) @ x), rel=1e-10)


def test_bold_K_norm_is_one_when_all_harmonic():
    c = make_complex((0, 0), {0: np.eye(3)}, {})
    ops = solution_operators(c, 0)
    np.testing.assert_allclose(ops.apply_bold_K(np.array([1.0, -2.0, 3.0])), [1.0, -2.0, 3.0], atol=1e-14)
    assert operator_norm_K(ops).value == pytest.approx(1.0, rel=1e-8)


def test_bold_K_norm_of_diagonal_example():
    c = _diag_complex()
    for k in (0, 1):
        ops = solution_operators(c, k)
        np.testing.assert_allclose(ops.apply_bold_K(np.array([1.0, 1.0])), [1.0, 0.25], atol=1e-14)
        estimate = operator_norm_K(ops)
        assert estimate.converged
        assert estimate.value == pytest.approx(1.0, rel=1e-6)
        # 缓存
        assert ops.norm("bold") is estimate


def test_power_norm_reports_failure():
    gram = np.eye(2)
    scale = np.diag([2.0, 1.0])
    # 单步迭代无法判断收敛
    with pytest.raises(ConvergenceError) as info:
        power_norm(lambda x: scale @ x, gram, max_iter=1)
    assert info.value.iterations == 1
    estimate = power_norm(lambda x: scale @ x, gram, max_iter=1, raise_on_failure=False)
    assert not estimate.converged
    assert 1.0 <= estimate.value <= 2.0
    assert power_norm(lambda x: x, np.zeros((0, 0))).value == 0.0


def test_power_norm_with_adjoint():
    t = np.array([[3.0, 0.0], [4.0, 0.0]])
    estimate = power_norm(lambda x: t @ x, np.eye(2), apply_adjoint=lambda y: t.T @ y)
    assert estimate.value == pytest.approx(5.0, rel=1e-6)


# ==================== 稳定性 ====================

def test_inf_sup_is_invariant_under_gram_scaling():
    c = whitney_complex(triangulated_square_mesh(2))
    doubled = c.with_grams({k: 2.0 * c.gram[k] for k in c.degree_range()})
    for k in c.degree_range():
        gamma = inf_sup_constant(assemble_mixed(c, k))
        assert gamma > 0.0
        assert inf_sup_constant(assemble_mixed(doubled, k)) == pytest.approx(gamma, rel=1e-8)


def test_inf_sup_is_mesh_stable():
    gammas = [inf_sup_constant(assemble_mixed(whitney_complex(unit_interval_mesh(n)), 0)) for n in (8, 16, 32)]
    assert max(gammas) <= 1.2 * min(gammas)


def test_stability_report(rng):
    c = whitney_complex(unit_interval_mesh(8))
    report = stability_report(c, 1, samples=5)
    assert len(report.ratios) == 5
    assert report.max_ratio > 0.0
    assert report.poincare is not None
    assert report.predicted == pytest.approx((1.0 + report.poincare) ** 2)
    assert report.family_factor == pytest.approx(report.max_ratio / report.predicted)
    assert report.to_dict()["samples"] == 5


def test_mixed_lipschitz_bound():
    assert mixed_lipschitz_bound(0.0, 1.0, 1.0) == float("inf")
    assert mixed_lipschitz_bound(0.5, 2.0, 0.25) == pytest.approx(np.sqrt(3.0) / 0.5 * 1.5)
