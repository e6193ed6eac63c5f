import numpy as np
import pytest

from velreg.fields import cg_from_function
from velreg.flowmap import (
    AffineMap,
    apply_map,
    flow_map,
    trace_points,
    transform_mesh,
)
from velreg.mesh import build_box_mesh
from velreg.quality import SimplicialMesh, mesh_quality
from velreg.synth import (
    make_disk_mesh,
    rotation_exact_pullback,
    rotation_velocity,
)


def zero_velocity(mesh):
    return cg_from_function(mesh, lambda p: np.zeros_like(p),
                            dirichlet_zero=True)


def bump_velocity(mesh, amp=1.0):
    dims = np.asarray(mesh.dims, float)

    def fn(p):
        s = p / dims
        env = np.prod(np.sin(np.pi * s), axis=1) ** 2
        out = np.empty_like(p)
        out[:, 0] = env * np.sin(np.pi * s[:, 1])
        out[:, 1] = -env * np.sin(np.pi * s[:, 0])
        if p.shape[1] == 3:
            out[:, 2] = 0.5 * env
        return amp * out

    return cg_from_function(mesh, fn, dirichlet_zero=True)


# -- affine algebra ------------------------------------------------------


def test_affine_apply_and_compose():
    a = AffineMap.create([[2.0, 0.0], [0.0, 2.0]], [1.0, -1.0])
    pts = np.array([[1.0, 1.0], [0.0, 0.5]])
    np.testing.assert_allclose(a.apply(pts), 2 * pts + [1.0, -1.0])

    b = AffineMap.create([[0.0, -1.0], [1.0, 0.0]], [0.0, 0.0])
    ab = a.compose(b)
    np.testing.assert_allclose(ab.apply(pts), a.apply(b.apply(pts)))


def test_affine_inverse_identity():
    rng = np.random.default_rng(0)
    m = rng.standard_normal((3, 3)) + 3 * np.eye(3)
    a = AffineMap.create(m, rng.standard_normal(3))
    ident = a.compose(a.inverse())
    np.testing.assert_allclose(ident.matrix_array, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(ident.translation_array, 0.0, atol=1e-12)


def test_affine_homogeneous_roundtrip():
    a = AffineMap.create([[1.0, 2.0], [0.0, 1.0]], [3.0, 4.0])
    b = AffineMap.from_homogeneous(a.to_homogeneous())
    assert a == b


def test_affine_singular_rejected():
    a = AffineMap.create([[1.0, 0.0], [0.0, 0.0]], [0.0, 0.0])
    with pytest.raises(ValueError):
        a.inverse()


# -- flow maps -----------------------------------------------------------


@pytest.mark.parametrize("backend", ["trace", "cg-transport"])
def test_zero_velocity_identity_map(backend):
    mesh = build_box_mesh((8, 8))
    m = flow_map([zero_velocity(mesh)], "forward", steps_per_field=10,
                 backend=backend)
    np.testing.assert_array_equal(m.coords, mesh.vertices)
    assert m.clamped_count == 0


def test_forward_then_inverse_recovers_identity():
    mesh = build_box_mesh((32, 32))
    vel = bump_velocity(mesh, amp=2.0)
    fwd = flow_map([vel], "forward", steps_per_field=100)
    back, _ = trace_points(fwd.coords, [vel], "inverse", steps_per_field=100)
    disp = np.abs(back - mesh.vertices).max()
    assert disp <= 0.05, disp


def test_tracer_matches_exact_rotation():
    # the radial rotation field preserves radii, so the exact flow is a
    # closed-form rotation; the tracer must reproduce it
    mesh = build_box_mesh((32, 32))
    vel = rotation_velocity(mesh, max_angle=0.6)
    rng = np.random.default_rng(1)
    pts = 16.0 + 8.0 * (rng.uniform(size=(40, 2)) - 0.5)
    traced, clamped = trace_points(pts, [vel], "inverse",
                                   steps_per_field=200)
    exact = rotation_exact_pullback(pts, vel._pivot, vel._omega, t=1.0)
    assert clamped == 0
    # CG1 interpolation of the velocity dominates the error budget
    np.testing.assert_allclose(traced, exact, atol=2e-2)


def test_constant_in_ball_velocity_moves_interior_linearly():
    mesh = build_box_mesh((24, 24))
    center = np.array([12.0, 12.0])
    shift = np.array([1.5, -0.75])

    def fn(p):
        r = np.linalg.norm(p - center, axis=1)
        out = np.zeros_like(p)
        out[r < 8.0] = shift
        return out

    vel = cg_from_function(mesh, fn, dirichlet_zero=True)
    pts = center + np.array([[0.0, 0.0], [2.0, 1.0], [-3.0, 0.5]])
    moved, _ = trace_points(pts, [vel], "forward", steps_per_field=50)
    np.testing.assert_allclose(moved, pts + shift, atol=1e-10)


def test_multi_field_composition_order():
    # two pure translations inside a big calm region compose exactly and
    # the inverse map undoes them regardless of order sensitivity
    mesh = build_box_mesh((32, 32))
    center = np.array([16.0, 16.0])

    def make_const(shift):
        def fn(p):
            r = np.linalg.norm(p - center, axis=1)
            out = np.zeros_like(p)
            out[r < 12.0] = np.asarray(shift)
            return out
        return cg_from_function(mesh, fn, dirichlet_zero=True)

    v1 = make_const([2.0, 0.0])
    v2 = make_const([0.0, 1.0])
    pts = center[None, :] + np.array([[0.0, 0.0], [1.0, -2.0]])
    fwd, _ = trace_points(pts, [v1, v2], "forward", steps_per_field=40)
    np.testing.assert_allclose(fwd, pts + [2.0, 1.0], atol=1e-9)
    back, _ = trace_points(fwd, [v1, v2], "inverse", steps_per_field=40)
    np.testing.assert_allclose(back, pts, atol=1e-9)


def test_backends_agree_on_smooth_field():
    mesh = build_box_mesh((16, 16))
    vel = bump_velocity(mesh, amp=1.0)
    a = flow_map([vel], "forward", steps_per_field=60, backend="trace")
    b = flow_map([vel], "forward", steps_per_field=60,
                 backend="cg-transport")
    # agreement up to O(h^2) + O(dt^2) on a coarse grid
    assert np.abs(a.coords - b.coords).max() < 0.15


def test_apply_map_variants():
    mesh = build_box_mesh((8, 8))
    pts = np.array([[1.0, 2.0], [3.0, 4.0]])
    ident = AffineMap.identity(2)
    np.testing.assert_array_equal(apply_map(ident, pts), pts)

    double = AffineMap.create(2 * np.eye(2), np.zeros(2))
    np.testing.assert_allclose(apply_map(double, pts), 2 * pts)

    inv_flow = flow_map([zero_velocity(mesh)], "inverse", steps_per_field=5)
    np.testing.assert_allclose(
        apply_map([inv_flow, double], pts), 2 * pts, atol=1e-12
    )
    with pytest.raises(TypeError):
        apply_map(object(), pts)


def test_flow_map_validation():
    mesh = build_box_mesh((8, 8))
    with pytest.raises(ValueError):
        flow_map([], "forward")
    with pytest.raises(ValueError):
        flow_map([zero_velocity(mesh)], "sideways")
    with pytest.raises(ValueError):
        flow_map([zero_velocity(mesh)], "forward", steps_per_field=0)
    other = build_box_mesh((8, 8))
    with pytest.raises(ValueError):
        flow_map([zero_velocity(mesh), zero_velocity(other)], "forward")


# -- mesh transformation --------------------------------------------------


def disk(center=(12.0, 12.0), radius=5.0):
    return make_disk_mesh(center, radius, rings=4, segments=18)


def test_transform_mesh_identity_bit_exact():
    grid = build_box_mesh((24, 24))
    mesh = disk()
    ident = AffineMap.identity(2)
    res = transform_mesh(mesh, ident, ident, [zero_velocity(grid)], ident,
                         steps_per_field=5)
    np.testing.assert_array_equal(res.mesh.vertices, mesh.vertices)
    np.testing.assert_array_equal(res.mesh.cells, mesh.cells)
    assert res.ok
    assert res.clamped_points == 0


def test_transform_mesh_uniform_scale_keeps_ratios():
    grid = build_box_mesh((24, 24))
    mesh = disk()
    ident = AffineMap.identity(2)
    scale = AffineMap.create(0.5 * np.eye(2), np.array([6.0, 6.0]))
    res = transform_mesh(mesh, scale, ident, [zero_velocity(grid)], ident,
                         steps_per_field=5)
    np.testing.assert_allclose(
        res.quality_after.radius_ratios,
        res.quality_before.radius_ratios,
        atol=1e-12,
    )


def test_transform_mesh_smooth_field_preserves_quality():
    grid = build_box_mesh((24, 24))
    mesh = disk()
    ident = AffineMap.identity(2)
    vel = bump_velocity(grid, amp=1.5)
    res = transform_mesh(mesh, ident, ident, [vel], ident,
                         steps_per_field=100)
    assert res.ok
    assert res.quality_after.min_ratio >= 0.5 * res.quality_before.min_ratio
    # the mesh actually moved
    assert np.abs(res.mesh.vertices - mesh.vertices).max() > 0.1


def test_transform_mesh_reports_inverted_cells():
    grid = build_box_mesh((24, 24))
    mesh = disk()
    ident = AffineMap.identity(2)
    mirror = AffineMap.create(np.diag([-1.0, 1.0]), np.array([24.0, 0.0]))
    res = transform_mesh(mesh, mirror, ident, [zero_velocity(grid)], ident,
                         steps_per_field=5)
    assert len(res.inverted_cells) == len(mesh.cells)
    assert not res.ok


def test_cg_transport_backend_in_pipeline():
    grid = build_box_mesh((16, 16))
    mesh = make_disk_mesh((8.0, 8.0), 3.5, rings=3, segments=12)
    ident = AffineMap.identity(2)
    vel = bump_velocity(grid, amp=1.0)
    res_a = transform_mesh(mesh, ident, ident, [vel], ident,
                           backend="trace", steps_per_field=60)
    res_b = transform_mesh(mesh, ident, ident, [vel], ident,
                           backend="cg-transport", steps_per_field=60)
    assert np.abs(res_a.mesh.vertices - res_b.mesh.vertices).max() < 0.2
