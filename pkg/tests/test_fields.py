import numpy as np
import pytest

from velreg.errors import OutOfDomainError
from velreg.fields import (
    CgVectorField,
    DgScalarField,
    cg_from_function,
    dg_constant,
    dg_from_function,
    evaluate,
    facet_traces,
    voxel_image_to_dg,
)
from velreg.mesh import build_box_mesh


@pytest.fixture(params=[(3, 2), (2, 2, 2)])
def mesh(request):
    return build_box_mesh(request.param)


def test_constant_field_evaluates_to_constant(mesh):
    field = dg_constant(mesh, 4.25)
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 1, (50, mesh.dim)) * np.asarray(mesh.dims)
    np.testing.assert_allclose(evaluate(field, pts), 4.25, atol=1e-13)


def test_dg_reproduces_linear_function(mesh):
    f = dg_from_function(mesh, lambda p: 2.0 * p[:, 0] - 0.5 * p.sum(axis=1))
    rng = np.random.default_rng(1)
    pts = rng.uniform(0, 1, (80, mesh.dim)) * np.asarray(mesh.dims)
    expected = 2.0 * pts[:, 0] - 0.5 * pts.sum(axis=1)
    np.testing.assert_allclose(evaluate(f, pts), expected, atol=1e-12)


def test_cg_reproduces_coordinates(mesh):
    f = cg_from_function(mesh, lambda p: p)
    rng = np.random.default_rng(2)
    pts = rng.uniform(0, 1, (80, mesh.dim)) * np.asarray(mesh.dims)
    np.testing.assert_allclose(evaluate(f, pts), pts, atol=1e-12)


def test_dg_side_selection_on_facet():
    mesh = build_box_mesh((1, 1))
    field = DgScalarField(mesh, np.array([[1.0, 1.0, 1.0], [5.0, 5.0, 5.0]]))
    e1, e2 = mesh.facet_cells[0]
    mid = mesh.vertices[mesh.facet_vertices[0]].mean(axis=0)
    v1 = evaluate(field, mid[None, :], cells=np.array([e1]))
    v2 = evaluate(field, mid[None, :], cells=np.array([e2]))
    assert v1[0] == pytest.approx(field.coeffs[e1, 0])
    assert v2[0] == pytest.approx(field.coeffs[e2, 0])
    assert v1[0] != v2[0]


def test_jump_of_continuous_function_vanishes(mesh):
    f = dg_from_function(mesh, lambda p: p[:, 0] ** 1 + 3.0 * p[:, -1])
    t1, t2 = facet_traces(f)
    np.testing.assert_allclose(t1 - t2, 0.0, atol=1e-12)
    # averages match direct midpoint evaluation
    mids = mesh.vertices[mesh.facet_vertices].mean(axis=1)
    expected = mids[:, 0] + 3.0 * mids[:, -1]
    np.testing.assert_allclose(0.5 * (t1 + t2), expected, atol=1e-12)


def test_evaluate_outside_domain_raises(mesh):
    field = dg_constant(mesh, 1.0)
    bad = np.full((1, mesh.dim), -0.5)
    with pytest.raises(OutOfDomainError):
        evaluate(field, bad)


def test_voxel_image_embedding():
    mesh = build_box_mesh((2, 2))
    img = np.zeros((2, 2))
    img[1, 0] = 7.0
    field = voxel_image_to_dg(img, mesh)
    # voxel (1, 0) is pixel index 1 -> cells 2 and 3
    np.testing.assert_allclose(field.coeffs[2], 7.0)
    np.testing.assert_allclose(field.coeffs[3], 7.0)
    assert field.coeffs.sum() == pytest.approx(7.0 * 2 * 3)
    # integral equals intensity sum times voxel volume
    assert field.integral() == pytest.approx(img.sum(), abs=1e-12)


def test_voxel_image_all_zero_and_3d_integral():
    mesh = build_box_mesh((2, 1, 2))
    img = np.arange(4, dtype=float).reshape(2, 1, 2)
    field = voxel_image_to_dg(img, mesh)
    assert field.integral() == pytest.approx(img.sum(), abs=1e-12)
    zero = voxel_image_to_dg(np.zeros((2, 1, 2)), mesh)
    assert np.all(zero.coeffs == 0.0)


def test_voxel_image_shape_mismatch():
    mesh = build_box_mesh((2, 2))
    with pytest.raises(ValueError):
        voxel_image_to_dg(np.zeros((3, 2)), mesh)


def test_dirichlet_flag_validates_boundary():
    mesh = build_box_mesh((2, 2))
    vals = np.ones((mesh.num_vertices, 2))
    with pytest.raises(ValueError):
        CgVectorField(mesh, vals, dirichlet_zero=True)
    vals[mesh.boundary_vertex_mask] = 0.0
    f = CgVectorField(mesh, vals, dirichlet_zero=True)
    assert f.max_norm() == pytest.approx(np.sqrt(2.0))
