import numpy as np
import pytest

from derham.mesh import EllipseCurve, cycle_mesh, triangulated_square_mesh, unit_interval_mesh
from derham.refine import compose, refine_levels, refine_uniform
from derham.whitney import whitney_complex

MESHES = {
    "interval": lambda: unit_interval_mesh(4),
    "cycle": lambda: cycle_mesh(5),
    "square": lambda: triangulated_square_mesh(2),
}


@pytest.mark.parametrize("family", sorted(MESHES))
def test_morphism_invariants_hold(family):
    coarse = MESHES[family]()
    fine, morphism = refine_uniform(coarse)
    violations = morphism.violations(whitney_complex(coarse), whitney_complex(fine))
    assert violations["morphism"] <= 1e-14
    assert violations["one_sided_inverse"] <= 1e-14
    assert violations["commuting"] <= 1e-14


@pytest.mark.parametrize("family", ["interval", "square"])
def test_essential_flavor_invariants_hold(family):
    coarse = MESHES[family]()
    fine, morphism = refine_uniform(coarse)
    ess = morphism.essential_flavor()
    assert ess.essential
    assert ess.essential_flavor() is ess
    violations = ess.violations(whitney_complex(coarse, essential=True), whitney_complex(fine, essential=True))
    assert max(violations.values()) <= 1e-14


def test_refinement_counts_and_h():
    fine, _ = refine_uniform(unit_interval_mesh(4))
    assert fine.count(1) == 8
    assert fine.h == pytest.approx(1.0 / 8)
    fine, _ = refine_uniform(triangulated_square_mesh(2))
    assert fine.count(2) == 32
    assert fine.h == pytest.approx(np.sqrt(2.0) / 4)
    fine, _ = refine_uniform(cycle_mesh(6))
    assert fine.count(0) == 12


def test_injection_preserves_linear_functions():
    coarse = triangulated_square_mesh(2)
    fine, morphism = refine_uniform(coarse)
    u = coarse.vertices[:, 0] - 3.0 * coarse.vertices[:, 1]
    np.testing.assert_allclose(morphism.inject[0] @ u, fine.vertices[:, 0] - 3.0 * fine.vertices[:, 1],
                               atol=1e-14)


def test_injection_preserves_edge_energy():
    # 细网格上的 Whitney 空间包含粗空间, i_h 保持 W-范数
    coarse = triangulated_square_mesh(2)
    fine, morphism = refine_uniform(coarse)
    c_coarse, c_fine = whitney_complex(coarse), whitney_complex(fine)
    rng = np.random.default_rng(3)
    for k in (0, 1, 2):
        x = rng.standard_normal(coarse.count(k))
        y = morphism.inject[k] @ x
        assert float(y @ (c_fine.gram[k] @ y)) == pytest.approx(float(x @ (c_coarse.gram[k] @ x)), rel=1e-12)


def test_cycle_midpoints_snap_to_ellipse():
    curve = EllipseCurve(1.0, 0.5)
    fine, _ = refine_uniform(cycle_mesh(6, curve))
    x, y = fine.vertices[:, 0], fine.vertices[:, 1]
    np.testing.assert_allclose(x ** 2 + (y / 0.5) ** 2, 1.0, atol=1e-14)
    assert fine.curve == curve
    assert fine.vertex_params.shape == (12,)


def test_compose_matches_refine_levels():
    coarse = triangulated_square_mesh(1)
    mid, first = refine_uniform(coarse)
    fine, second = refine_uniform(mid)
    composite = compose(first, second)
    fine2, chained = refine_levels(coarse, 2)
    assert fine2.count(2) == fine.count(2)
    for k in (0, 1, 2):
        assert abs(composite.inject[k] - chained.inject[k]).max() == 0.0
        assert abs(composite.project[k] - chained.project[k]).max() == 0.0
    violations = composite.violations(whitney_complex(coarse), whitney_complex(fine))
    assert max(violations.values()) <= 1e-14


def test_refine_levels_zero_has_no_morphism():
    mesh = unit_interval_mesh(3)
    same, morphism = refine_levels(mesh, 0)
    assert same is mesh
    assert morphism is None


# 环上的加密点吸附到曲线, i_h 不再保范数
@pytest.mark.parametrize("family", ["interval", "square"])
def test_projection_norms_are_at_least_one(family):
    coarse = MESHES[family]()
    fine, morphism = refine_uniform(coarse)
    c_coarse, c_fine = whitney_complex(coarse), whitney_complex(fine)
    for norm in ("W", "V"):
        norms = morphism.projection_norms(c_coarse, c_fine, norm=norm)
        assert sorted(norms) == sorted(morphism.project)
        assert all(value >= 1.0 - 1e-10 for value in norms.values())
    with pytest.raises(ValueError):
        morphism.projection_norms(c_coarse, c_fine, norm="L1")
