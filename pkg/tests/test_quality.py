import numpy as np
import pytest

from velreg.quality import (
    SimplicialMesh,
    boundary_roughness,
    mesh_quality,
    radius_ratios,
)
from velreg.synth import make_ball_mesh, make_disk_mesh


def test_equilateral_triangle_ratio_one():
    mesh = SimplicialMesh(
        np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]]),
        np.array([[0, 1, 2]]),
    )
    assert radius_ratios(mesh)[0] == pytest.approx(1.0, rel=1e-12)


def test_right_isoceles_triangle_ratio_closed_form():
    mesh = SimplicialMesh(
        np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
        np.array([[0, 1, 2]]),
    )
    # r = (a + b - c) / 2, R = c / 2 for the right triangle
    r = (2.0 - np.sqrt(2.0)) / 2.0
    expected = 2.0 * r / (np.sqrt(2.0) / 2.0)
    assert radius_ratios(mesh)[0] == pytest.approx(expected, rel=1e-12)


def test_flat_cell_reports_zero():
    mesh = SimplicialMesh(
        np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [0.0, 1.0]]),
        np.array([[0, 1, 2], [0, 1, 3]]),
    )
    ratios = radius_ratios(mesh)
    assert ratios[0] == 0.0
    assert ratios[1] > 0.5


def test_regular_tet_ratio_one():
    verts = np.array([
        [1.0, 1.0, 1.0],
        [1.0, -1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [-1.0, -1.0, 1.0],
    ])
    mesh = SimplicialMesh(verts, np.array([[0, 1, 2, 3]]))
    assert radius_ratios(mesh)[0] == pytest.approx(1.0, rel=1e-12)


def test_quality_report_fields():
    mesh = make_disk_mesh((0.0, 0.0), 1.0, rings=3, segments=12)
    rep = mesh_quality(mesh)
    assert rep.n_inverted == 0
    assert np.all(rep.volume_signs > 0)
    assert 0.0 < rep.min_ratio <= rep.mean_ratio <= 1.0
    assert rep.boundary_roughness >= 0.0
    summary = rep.summary()
    assert set(summary) == {"min_ratio", "mean_ratio", "n_inverted",
                            "boundary_roughness"}


def test_inverted_cell_detected():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    mesh = SimplicialMesh(verts, np.array([[0, 2, 1]]))  # clockwise
    rep = mesh_quality(mesh)
    assert rep.n_inverted == 1


def test_roughness_increases_for_jagged_boundary():
    smooth = make_disk_mesh((0.0, 0.0), 1.0, rings=4, segments=24)
    rough = SimplicialMesh(smooth.vertices.copy(), smooth.cells.copy())
    faces, _, _ = rough.boundary_facets()
    boundary_ids = np.unique(faces)
    rng = np.random.default_rng(0)
    verts = rough.vertices.copy()
    radial = verts[boundary_ids] / np.linalg.norm(
        verts[boundary_ids], axis=1, keepdims=True
    )
    verts[boundary_ids] += 0.08 * rng.uniform(-1, 1, (len(boundary_ids), 1)) \
        * radial
    rough = SimplicialMesh(verts, rough.cells)
    assert boundary_roughness(rough) > boundary_roughness(smooth) * 1.5


def test_ball_mesh_valid():
    mesh = make_ball_mesh((4.0, 4.0, 4.0), 2.0, subdivisions=1)
    rep = mesh_quality(mesh)
    assert rep.n_inverted == 0
    assert rep.min_ratio > 0.2
    faces, owners, opp = mesh.boundary_facets()
    assert len(faces) == 32  # 8 octant faces refined once


def test_disk_mesh_counts():
    mesh = make_disk_mesh((0.0, 0.0), 1.0, rings=2, segments=8)
    assert len(mesh.vertices) == 1 + 2 * 8
    assert len(mesh.cells) == 8 + 16
    assert (mesh.signed_volumes() > 0).all()


def test_simplicial_mesh_validation():
    with pytest.raises(ValueError):
        SimplicialMesh(np.zeros((3, 4)), np.zeros((1, 5), dtype=int))
    with pytest.raises(ValueError):
        SimplicialMesh(np.zeros((3, 2)), np.zeros((1, 4), dtype=int))
