"""Simplicial meshes in physical coordinates and quality auditing.

Quality is measured by the radius ratio d * inradius / circumradius
(1 for the regular simplex, 0 for a degenerate cell) together with the
signs of the signed volumes and a boundary-roughness proxy: the mean
angular deviation between outward normals of adjacent boundary facets.
A post-transform negative volume is reported, never silently dropped.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(eq=False)
class SimplicialMesh:
    """Vertices and simplices; boundary facets are derived on demand."""

    vertices: np.ndarray  # (n, d)
    cells: np.ndarray     # (m, d+1)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.cells = np.asarray(self.cells, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] not in (2, 3):
            raise ValueError("vertices must be (n, 2) or (n, 3)")
        d = self.vertices.shape[1]
        if self.cells.ndim != 2 or self.cells.shape[1] != d + 1:
            raise ValueError(f"cells must be (m, {d + 1})")

    @property
    def dim(self):
        return self.vertices.shape[1]

    def with_vertices(self, vertices):
        """Same connectivity over new vertex positions."""
        return SimplicialMesh(np.asarray(vertices, dtype=float),
                              self.cells.copy())

    def signed_volumes(self):
        p = self.vertices[self.cells]
        edges = p[:, 1:, :] - p[:, :1, :]
        det = np.linalg.det(edges)
        return det / (2.0 if self.dim == 2 else 6.0)

    def boundary_facets(self):
        """(nb, d) vertex index rows of faces owned by a single cell,
        plus (nb,) owning cells and (nb,) opposite local vertices."""
        d = self.dim
        ncv = d + 1
        keep = [[j for j in range(ncv) if j != ell] for ell in range(ncv)]
        faces = np.concatenate([np.sort(self.cells[:, k], axis=1)
                                for k in keep])
        owner = np.tile(np.arange(len(self.cells)), ncv)
        opp = np.repeat(np.arange(ncv), len(self.cells))
        order = np.lexsort(faces.T[::-1])
        fs = faces[order]
        new = np.empty(len(fs), dtype=bool)
        new[0] = True
        new[1:] = np.any(fs[1:] != fs[:-1], axis=1)
        group = np.cumsum(new) - 1
        counts = np.bincount(group)
        first = np.concatenate([[0], np.nonzero(new[1:])[0] + 1])
        single = order[first[counts == 1]]
        return faces[single], owner[single], opp[single]


@dataclass(eq=False)
class QualityReport:
    radius_ratios: np.ndarray
    min_ratio: float
    mean_ratio: float
    volume_signs: np.ndarray
    n_inverted: int
    boundary_roughness: float

    def summary(self):
        return {
            "min_ratio": self.min_ratio,
            "mean_ratio": self.mean_ratio,
            "n_inverted": self.n_inverted,
            "boundary_roughness": self.boundary_roughness,
        }


def radius_ratios(mesh):
    """d * inradius / circumradius per cell; degenerate cells report 0."""
    d = mesh.dim
    p = mesh.vertices[mesh.cells]
    vols = np.abs(mesh.signed_volumes())

    surface = np.zeros(len(mesh.cells))
    for ell in range(d + 1):
        keep = [j for j in range(d + 1) if j != ell]
        q = p[:, keep, :]
        if d == 2:
            surface += np.linalg.norm(q[:, 1] - q[:, 0], axis=1)
        else:
            cr = np.cross(q[:, 1] - q[:, 0], q[:, 2] - q[:, 0])
            surface += 0.5 * np.linalg.norm(cr, axis=1)

    scale = np.maximum(surface, 1e-300) ** (d / (d - 1.0))
    good = vols > 1e-12 * scale
    ratios = np.zeros(len(mesh.cells))
    if good.any():
        inradius = d * vols[good] / surface[good]
        circumradius = _circumradii(p[good])
        ratios[good] = d * inradius / circumradius
    return ratios


def _circumradii(p):
    # circumcenter c solves 2 (p_i - p_0) . c = |p_i|^2 - |p_0|^2
    a = 2.0 * (p[:, 1:, :] - p[:, :1, :])
    b = (p[:, 1:, :] ** 2).sum(axis=2) - (p[:, :1, :] ** 2).sum(axis=2)
    center = np.linalg.solve(a, b[..., None])[..., 0]
    return np.linalg.norm(center - p[:, 0, :], axis=1)


def boundary_roughness(mesh):
    """Mean angle between outward normals of adjacent boundary facets.

    Adjacency means sharing a vertex (2D) or an edge (3D).  Returns 0
    for meshes whose boundary facets have no neighbors.
    """
    faces, owners, opp = mesh.boundary_facets()
    if len(faces) < 2:
        return 0.0
    normals = _outward_normals(mesh, faces, owners, opp)

    d = mesh.dim
    if d == 2:
        key_rows = [faces[:, [0]], faces[:, [1]]]
    else:
        key_rows = [faces[:, [0, 1]], faces[:, [0, 2]], faces[:, [1, 2]]]
    pairs = {}
    angles = []
    for rows in key_rows:
        for f, key in enumerate(map(tuple, rows)):
            if key in pairs:
                g = pairs[key]
                cosang = np.clip(normals[f] @ normals[g], -1.0, 1.0)
                angles.append(np.arccos(cosang))
            else:
                pairs[key] = f
    return float(np.mean(angles)) if angles else 0.0


def _outward_normals(mesh, faces, owners, opp):
    p = mesh.vertices[faces]
    if mesh.dim == 2:
        t = p[:, 1] - p[:, 0]
        n = np.column_stack([t[:, 1], -t[:, 0]])
    else:
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)
    away = p.mean(axis=1) - mesh.vertices[mesh.cells[owners, opp]]
    wrong = np.einsum("fd,fd->f", n, away) < 0
    n[wrong] = -n[wrong]
    return n


def mesh_quality(mesh):
    """Full quality audit of a simplicial mesh."""
    ratios = radius_ratios(mesh)
    vols = mesh.signed_volumes()
    signs = np.sign(vols).astype(int)
    return QualityReport(
        radius_ratios=ratios,
        min_ratio=float(ratios.min()) if len(ratios) else 0.0,
        mean_ratio=float(ratios.mean()) if len(ratios) else 0.0,
        volume_signs=signs,
        n_inverted=int((signs <= 0).sum()),
        boundary_roughness=boundary_roughness(mesh),
    )
