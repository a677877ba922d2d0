import numpy as np
import pytest

from derham.mesh import (
    EllipseCurve,
    boundary_masks,
    cycle_mesh,
    family_mesh,
    load_mesh,
    save_mesh,
    triangulated_square_mesh,
    unit_interval_mesh,
)
from derham.quadrature import integrate, load_vector, simplex_rule, quadrature_points
from derham.whitney import assemble_mass, incidence, mass_condition_numbers, whitney_complex
from utils.errors import MeshError, UnsupportedDimensionError


# ==================== 网格 ====================

def test_family_sizes_and_h():
    interval = unit_interval_mesh(8)
    assert (interval.count(0), interval.count(1)) == (9, 8)
    assert interval.h == pytest.approx(1.0 / 8)

    square = triangulated_square_mesh(4)
    assert (square.count(0), square.count(1), square.count(2)) == (25, 3 * 16 + 8, 32)
    assert square.h == pytest.approx(np.sqrt(2.0) / 4)

    cycle = cycle_mesh(6)
    assert (cycle.count(0), cycle.count(1)) == (6, 6)
    assert cycle.h == pytest.approx(2.0 * np.sin(np.pi / 6))


def test_volumes_cover_domain():
    assert unit_interval_mesh(7).volumes().sum() == pytest.approx(1.0)
    assert triangulated_square_mesh(5).volumes().sum() == pytest.approx(1.0)
    np.testing.assert_allclose(triangulated_square_mesh(2).volumes(1)[:2], [0.5, 0.5])


def test_orientation_signs_of_sorted_simplices():
    assert np.all(unit_interval_mesh(5).orientations() == 1)
    signs = triangulated_square_mesh(3).orientations()
    assert np.sum(signs == 1) == 9
    assert np.sum(signs == -1) == 9
    with pytest.raises(MeshError):
        cycle_mesh(5).orientations()


def test_simplices_are_sorted():
    mesh = triangulated_square_mesh(3)
    for k in (1, 2):
        simp = mesh.simplices[k]
        assert np.all(np.diff(simp, axis=1) > 0)
        keys = [tuple(row) for row in simp.tolist()]
        assert keys == sorted(keys)


def test_fixture_matches_generated_square(square2_mesh):
    generated = triangulated_square_mesh(2)
    np.testing.assert_array_equal(square2_mesh.top, generated.top)
    np.testing.assert_allclose(square2_mesh.vertices, generated.vertices)


def test_mesh_json_roundtrip(tmp_path):
    mesh = cycle_mesh(5, EllipseCurve(2.0, 1.0))
    path = tmp_path / "cycle.json"
    save_mesh(mesh, str(path))
    back = load_mesh(str(path))
    np.testing.assert_array_equal(back.vertices, mesh.vertices)
    np.testing.assert_array_equal(back.vertex_params, mesh.vertex_params)
    assert back.curve == mesh.curve
    for k in range(mesh.dim + 1):
        np.testing.assert_array_equal(back.simplices[k], mesh.simplices[k])


def test_bad_mesh_requests():
    with pytest.raises(MeshError):
        unit_interval_mesh(0)
    with pytest.raises(MeshError):
        cycle_mesh(2)
    with pytest.raises(MeshError):
        family_mesh("torus", 4)


def test_boundary_masks():
    interval = boundary_masks(unit_interval_mesh(4))
    assert np.flatnonzero(interval[0]).tolist() == [0, 4]
    assert not interval[1].any()
    square = boundary_masks(triangulated_square_mesh(3))
    assert int(square[0].sum()) == 12
    assert int(square[1].sum()) == 12
    assert not square[2].any()
    cycle = boundary_masks(cycle_mesh(5))
    assert not any(m.any() for m in cycle)


# ==================== 积分 ====================

def test_quadrature_weights_sum_to_one():
    for dim in (1, 2):
        for degree in (0, 3, 7):
            _, w = simplex_rule(dim, degree)
            assert w.sum() == pytest.approx(1.0, rel=1e-14)


def test_quadrature_is_exact_for_polynomials():
    mesh = unit_interval_mesh(3)
    bary, w = simplex_rule(1, 5)
    pts = quadrature_points(mesh, bary)
    assert integrate(mesh, pts[..., 0] ** 5, w) == pytest.approx(1.0 / 6.0, rel=1e-13)

    square = triangulated_square_mesh(2)
    bary, w = simplex_rule(2, 3)
    pts = quadrature_points(square, bary)
    assert integrate(square, pts[..., 0] ** 2 * pts[..., 1], w) == pytest.approx(1.0 / 6.0, rel=1e-13)


def test_load_vector_of_constant_sums_to_area():
    for mesh in (unit_interval_mesh(5), triangulated_square_mesh(3)):
        b = load_vector(mesh, lambda x: np.ones(x.shape[:-1]), 1)
        assert b.sum() == pytest.approx(1.0, rel=1e-13)


# ==================== Whitney ====================

def test_incidence_orientation():
    mesh = unit_interval_mesh(3)
    d0 = incidence(mesh, 0).toarray()
    np.testing.assert_array_equal(d0[1], [0.0, -1.0, 1.0, 0.0])
    square = triangulated_square_mesh(2)
    product = incidence(square, 1) @ incidence(square, 0)
    assert product.nnz == 0 or abs(product).max() == 0.0
    with pytest.raises(UnsupportedDimensionError):
        incidence(mesh, 1)


def test_interval_complex_matches_fixture(interval4):
    c = whitney_complex(unit_interval_mesh(4))
    for k in (0, 1):
        np.testing.assert_allclose(c.gram[k].toarray(), interval4.gram[k].toarray(), atol=1e-15)
    np.testing.assert_array_equal(c.diff[0].toarray(), interval4.diff[0].toarray())


def test_constant_field_mass():
    for mesh in (unit_interval_mesh(6), triangulated_square_mesh(3)):
        m0 = assemble_mass(mesh, 0)
        ones = np.ones(mesh.count(0))
        assert float(ones @ m0 @ ones) == pytest.approx(1.0, rel=1e-13)


def test_edge_mass_reproduces_gradient_energy():
    # x + 2y 的梯度在 Whitney 1-形式中精确表示, ∫|∇u|² = 5
    mesh = triangulated_square_mesh(3)
    c = whitney_complex(mesh)
    u = mesh.vertices[:, 0] + 2.0 * mesh.vertices[:, 1]
    du = c.diff[0] @ u
    assert float(du @ (c.gram[1] @ du)) == pytest.approx(5.0, rel=1e-12)


def test_face_mass_is_inverse_area():
    mesh = triangulated_square_mesh(2)
    m2 = assemble_mass(mesh, 2).toarray()
    np.testing.assert_allclose(np.diag(m2), 1.0 / mesh.volumes(), rtol=1e-13)
    np.testing.assert_allclose(m2 - np.diag(np.diag(m2)), 0.0)


def test_threaded_assembly_matches_serial():
    mesh = triangulated_square_mesh(4)
    for k in (0, 1, 2):
        serial = assemble_mass(mesh, k).toarray()
        threaded = assemble_mass(mesh, k, workers=3).toarray()
        np.testing.assert_allclose(threaded, serial, atol=1e-14)


def test_essential_dimensions():
    c = whitney_complex(unit_interval_mesh(5), essential=True)
    assert (c.dim(0), c.dim(1)) == (4, 5)
    n = 3
    c = whitney_complex(triangulated_square_mesh(n), essential=True)
    assert (c.dim(0), c.dim(1), c.dim(2)) == ((n - 1) ** 2, 3 * n * n - 2 * n, 2 * n * n)


def test_realization_scatter_gather(rng):
    c = whitney_complex(triangulated_square_mesh(3), essential=True)
    real = c.realization
    for k in c.degree_range():
        x = rng.standard_normal(c.dim(k))
        full = real.scatter(k, x)
        assert full.shape[0] == real.mesh.count(k)
        np.testing.assert_array_equal(real.gather(k, full), x)


def test_mass_conditioning_is_bounded():
    conds = mass_condition_numbers(whitney_complex(triangulated_square_mesh(4)))
    assert len(conds) == 3
    assert all(1.0 <= v < 100.0 for v in conds)
