"""Structured simplicial meshes over pixel/voxel boxes.

A box of ``dims = (n1, n2[, n3])`` voxels is triangulated with 2
triangles per pixel (one fixed diagonal direction) or 6 tetrahedra per
voxel (Kuhn subdivision).  Vertices sit on the integer lattice of
``[0, n1] x [0, n2] [x [0, n3]]``; voxel (i, j[, k]) spans the unit cube
anchored there.  Meshes are immutable after construction: all arrays are
marked read-only.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfDomainError

# Lexicographic 3-permutations; tet r of a voxel covers the region where
# the fractional coordinates sorted descending follow _PERMS3[r].
_PERMS3 = tuple(itertools.permutations(range(3)))


@dataclass(eq=False)
class GridMesh:
    """Simplicial mesh of a voxel box with facet connectivity.

    Interior facet f separates cells ``facet_cells[f, 0]`` (E1) and
    ``facet_cells[f, 1]`` (E2); ``facet_normals[f]`` is the unit normal
    pointing from E1 toward E2.  ``facet_local[f, s, j]`` gives the
    cell-local vertex slot (0..dim) of facet vertex j on side s.
    """

    dims: tuple
    dim: int
    vertices: np.ndarray        # (nv, d)
    cells: np.ndarray           # (nc, d+1)
    cell_volumes: np.ndarray    # (nc,)
    grad_bary: np.ndarray       # (nc, d+1, d) gradients of barycentric basis
    facet_cells: np.ndarray     # (nf, 2) -> [E1, E2]
    facet_vertices: np.ndarray  # (nf, d) global vertex ids (canonical order)
    facet_local: np.ndarray     # (nf, 2, d)
    facet_normals: np.ndarray   # (nf, d) unit, E1 -> E2
    facet_areas: np.ndarray     # (nf,)
    boundary_cells: np.ndarray      # (nb,)
    boundary_vertices: np.ndarray   # (nb, d)
    boundary_local: np.ndarray      # (nb, d)
    boundary_normals: np.ndarray    # (nb, d) outward unit
    boundary_areas: np.ndarray      # (nb,)
    boundary_vertex_mask: np.ndarray  # (nv,) bool
    h_min: float = 0.0
    _extras: dict = field(default_factory=dict, repr=False)

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_cells(self):
        return self.cells.shape[0]

    @property
    def num_facets(self):
        return self.facet_cells.shape[0]

    @property
    def cells_per_voxel(self):
        return 2 if self.dim == 2 else 6

    def vertex_index(self, multi):
        """Flat index of lattice vertex (i, j[, k]) (x-fastest)."""
        stride = 1
        idx = 0
        for m, n in zip(multi, self.dims):
            idx += m * stride
            stride *= n + 1
        return idx

    def locate(self, points):
        """Containing cell index and barycentric coords for each point.

        Points must lie inside the box (within 1e-12 tolerance); points
        exactly on shared facets resolve to one side by the floor
        convention.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        lo = points.min(axis=0)
        hi = points.max(axis=0)
        if (lo < -1e-12).any() or (hi > np.asarray(self.dims) + 1e-12).any():
            n_out = int(
                ((points < -1e-12) | (points > np.asarray(self.dims) + 1e-12))
                .any(axis=1)
                .sum()
            )
            raise OutOfDomainError(f"{n_out} point(s) outside the mesh box")
        return self._locate_clipped(points)

    def _locate_clipped(self, points):
        dims = np.asarray(self.dims)
        p = np.clip(points, 0.0, dims)
        vox = np.minimum(p.astype(int), dims - 1)
        frac = p - vox
        if self.dim == 2:
            pix = vox[:, 0] + self.dims[0] * vox[:, 1]
            local = (frac[:, 0] < frac[:, 1]).astype(int)
            cell = 2 * pix + local
        else:
            vid = vox[:, 0] + dims[0] * (vox[:, 1] + dims[1] * vox[:, 2])
            # Kuhn tet rank: descending argsort (a, b, c) of the
            # fractional coords maps to lexicographic rank 2a + (b > c)
            order = np.argsort(-frac, kind="stable", axis=1)
            rank = 2 * order[:, 0] + (order[:, 1] > order[:, 2])
            cell = 6 * vid + rank
        v0 = self.vertices[self.cells[cell, 0]]
        g = self.grad_bary[cell]  # (n, d+1, d)
        lam = np.einsum("nid,nd->ni", g, p - v0)
        lam[:, 0] += 1.0
        return cell, lam

    def barycentric(self, cell, points):
        """Barycentric coordinates of points w.r.t. given cells."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        cell = np.atleast_1d(cell)
        v0 = self.vertices[self.cells[cell, 0]]
        lam = np.einsum("nid,nd->ni", self.grad_bary[cell], points - v0)
        lam[:, 0] += 1.0
        return lam


def build_box_mesh(dims, dim=None):
    """Structured simplicial mesh of a `dims` voxel box.

    dims are positive integer extents; dim (2 or 3) defaults to
    len(dims).
    """
    dims = tuple(int(n) for n in dims)
    if dim is None:
        dim = len(dims)
    if dim not in (2, 3):
        raise ValueError(f"dim must be 2 or 3, got {dim}")
    if len(dims) != dim:
        raise ValueError(f"dims {dims} inconsistent with dim {dim}")
    if any(n < 1 for n in dims):
        raise ValueError(f"extents must be >= 1, got {dims}")

    if dim == 2:
        vertices, cells = _build_cells_2d(dims)
    else:
        vertices, cells = _build_cells_3d(dims)

    volumes, grads = _cell_geometry(vertices, cells)
    mesh = GridMesh(
        dims=dims,
        dim=dim,
        vertices=vertices,
        cells=cells,
        cell_volumes=volumes,
        grad_bary=grads,
        **_build_facets(vertices, cells, grads),
        boundary_vertex_mask=_boundary_mask(vertices, dims),
    )
    mesh.h_min = float(_in_diameters(mesh).min())
    for name in (
        "vertices", "cells", "cell_volumes", "grad_bary", "facet_cells",
        "facet_vertices", "facet_local", "facet_normals", "facet_areas",
        "boundary_cells", "boundary_vertices", "boundary_local",
        "boundary_normals", "boundary_areas", "boundary_vertex_mask",
    ):
        getattr(mesh, name).flags.writeable = False
    return mesh


def _build_cells_2d(dims):
    n1, n2 = dims
    ii = np.tile(np.arange(n1 + 1), n2 + 1)
    jj = np.repeat(np.arange(n2 + 1), n1 + 1)
    vertices = np.column_stack([ii, jj]).astype(float)

    pi = np.tile(np.arange(n1), n2)
    pj = np.repeat(np.arange(n2), n1)
    v00 = pi + (n1 + 1) * pj
    v10 = v00 + 1
    v01 = v00 + (n1 + 1)
    v11 = v01 + 1
    npx = n1 * n2
    cells = np.empty((2 * npx, 3), dtype=np.int64)
    # lower-right triangle covers frac_x >= frac_y, upper-left the rest;
    # the shared diagonal v00-v11 has the same direction in every pixel
    cells[0::2] = np.column_stack([v00, v10, v11])
    cells[1::2] = np.column_stack([v00, v11, v01])
    return vertices, cells


def _build_cells_3d(dims):
    n1, n2, n3 = dims
    ii = np.tile(np.arange(n1 + 1), (n2 + 1) * (n3 + 1))
    jj = np.tile(np.repeat(np.arange(n2 + 1), n1 + 1), n3 + 1)
    kk = np.repeat(np.arange(n3 + 1), (n1 + 1) * (n2 + 1))
    vertices = np.column_stack([ii, jj, kk]).astype(float)

    vi = np.tile(np.arange(n1), n2 * n3)
    vj = np.tile(np.repeat(np.arange(n2), n1), n3)
    vk = np.repeat(np.arange(n3), n1 * n2)
    base = vi + (n1 + 1) * (vj + (n2 + 1) * vk)
    strides = np.array([1, n1 + 1, (n1 + 1) * (n2 + 1)])

    nvox = n1 * n2 * n3
    cells = np.empty((6 * nvox, 4), dtype=np.int64)
    for r, perm in enumerate(_PERMS3):
        o1 = strides[perm[0]]
        o2 = o1 + strides[perm[1]]
        o3 = o2 + strides[perm[2]]
        tet = np.column_stack([base, base + o1, base + o2, base + o3])
        # odd permutations give negative volume; swap two vertices
        if _perm_sign(perm) < 0:
            tet[:, [1, 2]] = tet[:, [2, 1]]
        cells[r::6] = tet
    return vertices, cells


def _perm_sign(perm):
    sign = 1
    perm = list(perm)
    for i in range(len(perm)):
        for j in range(i + 1, len(perm)):
            if perm[i] > perm[j]:
                sign = -sign
    return sign


def _cell_geometry(vertices, cells):
    d = vertices.shape[1]
    p = vertices[cells]                         # (nc, d+1, d)
    edges = p[:, 1:, :] - p[:, :1, :]           # (nc, d, d)
    det = np.linalg.det(edges)
    volumes = det / (2.0 if d == 2 else 6.0)
    if (volumes <= 0).any():
        raise ValueError("degenerate or inverted cell in box mesh")
    inv = np.linalg.inv(edges)                  # rows of inv^T are grad xi_i
    grads = np.empty((cells.shape[0], d + 1, d))
    grads[:, 1:, :] = np.swapaxes(inv, 1, 2)
    grads[:, 0, :] = -grads[:, 1:, :].sum(axis=1)
    return volumes, grads


def _build_facets(vertices, cells, grads):
    nc, ncv = cells.shape
    d = vertices.shape[1]
    # face ell of a cell excludes local vertex ell
    keep = [[j for j in range(ncv) if j != ell] for ell in range(ncv)]
    faces = np.concatenate([np.sort(cells[:, k], axis=1) for k in keep])
    owner_cell = np.tile(np.arange(nc), ncv)
    owner_opp = np.repeat(np.arange(ncv), nc)

    order = np.lexsort(faces.T[::-1])
    faces_s = faces[order]
    new_group = np.any(faces_s[1:] != faces_s[:-1], axis=1)
    group_id = np.concatenate([[0], np.cumsum(new_group)])
    counts = np.bincount(group_id)
    if counts.max() > 2:
        raise ValueError("facet shared by more than two cells")

    first = np.concatenate([[0], np.nonzero(new_group)[0] + 1])
    interior_groups = np.nonzero(counts == 2)[0]
    boundary_groups = np.nonzero(counts == 1)[0]

    fi = first[interior_groups]
    pair = np.column_stack([order[fi], order[fi + 1]])
    c_a, c_b = owner_cell[pair[:, 0]], owner_cell[pair[:, 1]]
    swap = c_a > c_b  # E1 is the lower cell index: arbitrary but fixed
    pair[swap] = pair[swap][:, ::-1]
    e1_entry, e2_entry = pair[:, 0], pair[:, 1]

    facet_cells = np.column_stack([owner_cell[e1_entry], owner_cell[e2_entry]])
    facet_vertices = faces[e1_entry]
    loc1 = _local_slots(cells[facet_cells[:, 0]], facet_vertices)
    loc2 = _local_slots(cells[facet_cells[:, 1]], facet_vertices)
    facet_local = np.stack([loc1, loc2], axis=1)

    opp1 = owner_opp[e1_entry]
    g = grads[facet_cells[:, 0], opp1]            # grad of opposite basis
    facet_normals = -g / np.linalg.norm(g, axis=1, keepdims=True)
    facet_areas = _face_measure(vertices, facet_vertices)

    be = order[first[boundary_groups]]
    boundary_cells = owner_cell[be]
    boundary_vertices = faces[be]
    boundary_local = _local_slots(cells[boundary_cells], boundary_vertices)
    gb = grads[boundary_cells, owner_opp[be]]
    boundary_normals = -gb / np.linalg.norm(gb, axis=1, keepdims=True)
    boundary_areas = _face_measure(vertices, boundary_vertices)

    return dict(
        facet_cells=facet_cells,
        facet_vertices=facet_vertices,
        facet_local=facet_local,
        facet_normals=facet_normals,
        facet_areas=facet_areas,
        boundary_cells=boundary_cells,
        boundary_vertices=boundary_vertices,
        boundary_local=boundary_local,
        boundary_normals=boundary_normals,
        boundary_areas=boundary_areas,
    )


def _local_slots(cell_rows, face_verts):
    # position of each face vertex inside its cell's vertex tuple
    match = cell_rows[:, :, None] == face_verts[:, None, :]
    return match.argmax(axis=1)


def _face_measure(vertices, face_verts):
    p = vertices[face_verts]
    if face_verts.shape[1] == 2:
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    cr = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    return 0.5 * np.linalg.norm(cr, axis=1)


def _boundary_mask(vertices, dims):
    mask = np.zeros(vertices.shape[0], dtype=bool)
    for ax, n in enumerate(dims):
        mask |= vertices[:, ax] == 0.0
        mask |= vertices[:, ax] == float(n)
    return mask


def _in_diameters(mesh):
    """Per-cell in-diameter 2 * r, r = d * volume / (sum of face areas)."""
    d = mesh.dim
    total = np.zeros(mesh.num_cells)
    for ell in range(d + 1):
        keep = [j for j in range(d + 1) if j != ell]
        total += _face_measure(mesh.vertices, mesh.cells[:, keep])
    return 2.0 * d * mesh.cell_volumes / total
