"""DG1 scalar and CG1 vector fields on box meshes.

DG coefficients are stored cell-major with one value per (cell, local
vertex); CG vector fields store one d-vector per mesh vertex.  Both are
evaluated by barycentric-linear interpolation inside cells.
"""

from dataclasses import dataclass

import numpy as np

from .mesh import GridMesh


@dataclass(eq=False)
class DgScalarField:
    """Per-cell linear scalar field, discontinuous across facets."""

    mesh: GridMesh
    coeffs: np.ndarray  # (nc, d+1)

    def __post_init__(self):
        self.coeffs = np.ascontiguousarray(self.coeffs, dtype=float)
        expected = (self.mesh.num_cells, self.mesh.dim + 1)
        if self.coeffs.shape != expected:
            raise ValueError(
                f"DG coefficient shape {self.coeffs.shape}, expected {expected}"
            )

    def copy(self):
        return DgScalarField(self.mesh, self.coeffs.copy())

    def integral(self):
        """Exact integral over the mesh (mean of linear = centroid value)."""
        return float(
            (self.mesh.cell_volumes * self.coeffs.mean(axis=1)).sum()
        )


@dataclass(eq=False)
class CgVectorField:
    """Continuous piecewise-linear vector field with nodal values.

    With ``dirichlet_zero`` the nodal vectors on all boundary vertices
    must be exactly zero (so the normal velocity vanishes on the domain
    boundary).
    """

    mesh: GridMesh
    values: np.ndarray  # (nv, d)
    dirichlet_zero: bool = False

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=float)
        expected = (self.mesh.num_vertices, self.mesh.dim)
        if self.values.shape != expected:
            raise ValueError(
                f"CG value shape {self.values.shape}, expected {expected}"
            )
        if self.dirichlet_zero:
            bnd = self.values[self.mesh.boundary_vertex_mask]
            if bnd.size and np.any(bnd != 0.0):
                raise ValueError(
                    "dirichlet_zero field has nonzero boundary values"
                )

    def copy(self):
        return CgVectorField(self.mesh, self.values.copy(), self.dirichlet_zero)

    def max_norm(self):
        """Largest nodal Euclidean norm."""
        if self.values.size == 0:
            return 0.0
        return float(np.linalg.norm(self.values, axis=1).max())


def evaluate(field, points, cells=None):
    """Evaluate a DG or CG field at points.

    `cells` optionally pins the evaluation cell per point; for a DG
    field this selects the side of a facet.  Without it, points are
    located through the structured grid (facet points resolve to one
    side by the floor convention).
    """
    mesh = field.mesh
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if cells is None:
        cells, lam = mesh.locate(points)
    else:
        cells = np.broadcast_to(np.atleast_1d(cells), (points.shape[0],))
        lam = mesh.barycentric(cells, points)
    if isinstance(field, DgScalarField):
        return np.einsum("ni,ni->n", field.coeffs[cells], lam)
    if isinstance(field, CgVectorField):
        return np.einsum("nic,ni->nc", field.values[mesh.cells[cells]], lam)
    raise TypeError(f"cannot evaluate object of type {type(field)!r}")


def voxel_image_to_dg(image, mesh):
    """Embed a voxel intensity array as a piecewise-constant DG1 field.

    Every cell inside voxel (i, j[, k]) gets all its coefficients set to
    that voxel's intensity.
    """
    image = np.asarray(image, dtype=float)
    if image.shape != tuple(mesh.dims):
        raise ValueError(
            f"image shape {image.shape} does not match mesh dims {mesh.dims}"
        )
    flat = image.ravel(order="F")  # x-fastest, matching cell construction
    voxel_of_cell = np.arange(mesh.num_cells) // mesh.cells_per_voxel
    coeffs = np.repeat(flat[voxel_of_cell][:, None], mesh.dim + 1, axis=1)
    return DgScalarField(mesh, coeffs)


def dg_constant(mesh, value):
    return DgScalarField(
        mesh, np.full((mesh.num_cells, mesh.dim + 1), float(value))
    )


def dg_from_function(mesh, fn):
    """DG1 interpolant of fn(points) at the cell vertices."""
    vals = np.asarray(fn(mesh.vertices), dtype=float)
    return DgScalarField(mesh, vals[mesh.cells])


def cg_from_function(mesh, fn, dirichlet_zero=False):
    """CG1 interpolant of a vector-valued fn(points)."""
    vals = np.asarray(fn(mesh.vertices), dtype=float)
    if dirichlet_zero:
        vals = vals.copy()
        vals[mesh.boundary_vertex_mask] = 0.0
    return CgVectorField(mesh, vals, dirichlet_zero=dirichlet_zero)


def facet_traces(field, facet_ids=None, point="midpoint"):
    """Traces of a DG field on both sides of interior facets.

    Returns (trace_E1, trace_E2) at facet midpoints; used to build jumps
    trace_E1 - trace_E2 and averages (trace_E1 + trace_E2) / 2.
    """
    mesh = field.mesh
    if facet_ids is None:
        facet_ids = np.arange(mesh.num_facets)
    d = mesh.dim
    out = []
    for side in (0, 1):
        cells = mesh.facet_cells[facet_ids, side]
        loc = mesh.facet_local[facet_ids, side]  # (nf, d)
        vals = np.take_along_axis(field.coeffs[cells], loc, axis=1)
        out.append(vals.mean(axis=1))  # midpoint: equal barycentric weights
    return out[0], out[1]
