import json

import numpy as np
import pytest

from derham.mesh import unit_interval_mesh
from derham.whitney import whitney_complex
from hilbert.complex import make_complex
from hilbert.hodge import (
    adjoint_differential,
    cocycle_basis,
    dual_complex,
    harmonic_basis,
    hodge_decompose,
    perp_basis,
    poincare_constant,
    poincare_ratio,
)
from utils.errors import DegreeOutOfRangeError, DimensionMismatchError, EmptyPerpSpaceError


def _inner(c, k, a, b):
    return float(a @ (c.gram_at(k) @ b))


# ==================== 分解 ====================

def test_cycle_edge_harmonic_part(cycle4, fixtures_dir):
    with open(fixtures_dir / "cycle4_edge_vector.json", "r", encoding="utf-8") as f:
        payload = json.load(f)
    dec = hodge_decompose(cycle4, payload["degree"], np.asarray(payload["vector"], dtype=float))
    np.testing.assert_allclose(dec.harmonic_part, [0.5, 0.5, 0.5, -0.5], atol=1e-12)
    assert dec.dims == {"B": 3, "H": 1, "perp": 0}
    np.testing.assert_allclose(dec.perp_part, np.zeros(4), atol=1e-12)


def test_decomposition_is_orthogonal_and_complete(whitney_family, rng):
    _, c = whitney_family
    for k in c.degree_range():
        for _ in range(100):
            v = rng.standard_normal(c.dim(k))
            dec = hodge_decompose(c, k, v)
            scale = _inner(c, k, v, v)
            b, h, z = dec.coboundary_part, dec.harmonic_part, dec.perp_part
            assert abs(_inner(c, k, b, h)) <= 1e-10 * scale
            assert abs(_inner(c, k, b, z)) <= 1e-10 * scale
            assert abs(_inner(c, k, h, z)) <= 1e-10 * scale
            np.testing.assert_allclose(b + h + z, v, atol=1e-12 * np.abs(v).max())
            # B 和 H 都在 ker D^k 里
            d = c.diff_at(k)
            if d.shape[0]:
                assert np.abs(d @ b).max() <= 1e-9 * np.abs(v).max()
                assert np.abs(d @ h).max() <= 1e-9 * np.abs(v).max()


def test_harmonic_vector_is_its_own_harmonic_part(whitney_family):
    _, c = whitney_family
    for k in c.degree_range():
        basis = harmonic_basis(c, k)
        if basis.shape[1] == 0:
            continue
        v = basis[:, 0]
        dec = hodge_decompose(c, k, v)
        np.testing.assert_allclose(dec.harmonic_part, v, atol=1e-10)
        np.testing.assert_allclose(dec.coboundary_part, 0.0, atol=1e-10)
        np.testing.assert_allclose(dec.perp_part, 0.0, atol=1e-10)


def test_zero_vector_decomposes_to_zero(interval4):
    dec = hodge_decompose(interval4, 0, np.zeros(5))
    for part in (dec.coboundary_part, dec.harmonic_part, dec.perp_part):
        assert np.all(part == 0.0)


def test_dense_projectors_are_idempotent(whitney_family, rng):
    name, c = whitney_family
    k = 1
    dec = hodge_decompose(c, k, rng.standard_normal(c.dim(k)))
    proj = dec.projectors()
    for key in ("P_B", "P_H", "P_perp"):
        p = proj[key]
        np.testing.assert_allclose(p @ p, p, atol=1e-9)
    np.testing.assert_allclose(proj["P_B"] + proj["P_H"] + proj["P_perp"], np.eye(c.dim(k)), atol=1e-12)
    x = rng.standard_normal(c.dim(k))
    np.testing.assert_allclose(dec.apply_P_H(x), proj["P_H"] @ x, atol=1e-10)
    np.testing.assert_allclose(dec.apply_P_perp(x), proj["P_perp"] @ x, atol=1e-10)


def test_bases_dimensions_add_up(whitney_family):
    _, c = whitney_family
    for k in c.degree_range():
        z = cocycle_basis(c, k).shape[1]
        perp = perp_basis(c, k).shape[1]
        assert z + perp == c.dim(k)


def test_wrong_length_rejected(cycle4):
    with pytest.raises(DimensionMismatchError):
        hodge_decompose(cycle4, 1, np.ones(3))
    with pytest.raises(DegreeOutOfRangeError):
        hodge_decompose(cycle4, 2, np.ones(4))


# ==================== 伴随 ====================

def test_adjoint_is_transpose_for_identity_grams(cycle4):
    np.testing.assert_allclose(adjoint_differential(cycle4, 1), cycle4.diff[0].toarray().T, atol=1e-14)


def test_adjoint_identity_and_dual_cochain(whitney_family):
    _, c = whitney_family
    dual = dual_complex(c)
    for k in range(c.k_min + 1, c.k_max + 1):
        assert dual.adjoint_identity_violation(k) <= 1e-12
    for k in range(c.k_min + 1, c.k_max):
        assert dual.cochain_violation(k) <= 1e-12


def test_adjoint_needs_lower_degree(interval4):
    with pytest.raises(DegreeOutOfRangeError):
        adjoint_differential(interval4, 0)


def test_zero_map_has_zero_adjoint():
    c = make_complex((0, 1), {0: np.eye(2), 1: 3.0 * np.eye(3)}, {0: np.zeros((3, 2))})
    assert np.all(adjoint_differential(c, 1) == 0.0)


# ==================== Poincaré ====================

def test_poincare_constant_of_scalar_complex():
    c = make_complex((0, 1), {0: [[1.0]], 1: [[1.0]]}, {0: [[1.0]]})
    assert poincare_constant(c, 0).constant == pytest.approx(np.sqrt(2.0), rel=1e-12)
    c2 = make_complex((0, 1), {0: [[1.0]], 1: [[1.0]]}, {0: [[2.0]]})
    assert poincare_constant(c2, 0).constant == pytest.approx(np.sqrt(1.25), rel=1e-12)


def test_poincare_witness_attains_constant():
    c = whitney_complex(unit_interval_mesh(8))
    data = poincare_constant(c, 0)
    assert poincare_ratio(c, 0, data.witness) == pytest.approx(data.constant, rel=1e-8)


def test_poincare_constant_is_mesh_stable():
    coarse = poincare_constant(whitney_complex(unit_interval_mesh(16)), 0).constant
    fine = poincare_constant(whitney_complex(unit_interval_mesh(32)), 0).constant
    assert abs(coarse - fine) <= 0.05 * fine
    # 连续情形 sqrt(1 + 1/pi^2)
    assert fine == pytest.approx(np.sqrt(1.0 + 1.0 / np.pi ** 2), rel=1e-2)


def test_poincare_inequality_on_random_perp_vectors(whitney_family, rng):
    _, c = whitney_family
    for k in c.degree_range():
        basis = perp_basis(c, k)
        if basis.shape[1] == 0:
            continue
        bound = poincare_constant(c, k).constant
        for _ in range(1000):
            v = basis @ rng.standard_normal(basis.shape[1])
            assert poincare_ratio(c, k, v) <= bound * (1.0 + 1e-10)


def test_poincare_ratio_none_on_cocycles(interval4):
    assert poincare_ratio(interval4, 0, np.ones(5)) is None


def test_poincare_on_top_degree_raises(interval4):
    with pytest.raises(EmptyPerpSpaceError):
        poincare_constant(interval4, 1)
