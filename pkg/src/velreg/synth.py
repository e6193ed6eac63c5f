"""Synthetic image pairs, analytic velocity fields, and small test
meshes.

All generators are deterministic given their seed.  Image cases are
built from closed-form expressions so targets need no resampling: the
target intensity is the source formula composed with the inverse of a
known ground-truth deformation where one exists.
"""

from dataclasses import dataclass

import numpy as np

from .quality import SimplicialMesh

CASES = ("translate-blob", "rotate-blob", "two-blobs", "checker-detail")


@dataclass(eq=False)
class SyntheticPair:
    """Source/target intensity arrays plus ground-truth metadata."""

    case: str
    source: np.ndarray
    target: np.ndarray
    params: dict
    ground_truth: dict | None


def _bump(r2):
    """C-infinity bump: 1 at the center, identically 0 for r2 >= 1."""
    out = np.zeros_like(r2)
    inside = r2 < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
    return out


def _voxel_centers(dims):
    axes = [np.arange(n) + 0.5 for n in dims]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1), grids[0].shape


def blob_image(dims, center, radius, amplitude=1.0):
    pts, shape = _voxel_centers(dims)
    r2 = (((pts - np.asarray(center)) / radius) ** 2).sum(axis=1)
    return amplitude * _bump(r2).reshape(shape)


def make_synthetic(case, dims, params=None, seed=0):
    """Deterministic synthetic source/target pair for a named case."""
    dims = tuple(int(n) for n in dims)
    if any(n < 16 for n in dims):
        raise ValueError("synthetic cases need at least 16 voxels per axis")
    params = dict(params or {})
    rng = np.random.default_rng(seed)
    if case == "translate-blob":
        return _translate_blob(dims, params)
    if case == "rotate-blob":
        return _rotate_blob(dims, params)
    if case == "two-blobs":
        return _two_blobs(dims, params, rng)
    if case == "checker-detail":
        return _checker_detail(dims, params)
    raise ValueError(f"unknown synthetic case {case!r}")


def _translate_blob(dims, params):
    d = len(dims)
    center = np.asarray(
        params.setdefault("center", [n / 2.0 - 2.0 for n in dims])
    )
    radius = params.setdefault("radius", min(dims) / 5.0)
    shift = np.asarray(
        params.setdefault("shift", [3.0] + [0.0] * (d - 1)), dtype=float
    )
    source = blob_image(dims, center, radius)
    target = blob_image(dims, center + shift, radius)
    truth = {
        "kind": "translation",
        "shift": shift.tolist(),
        "support_center": center.tolist(),
        "support_radius": radius,
    }
    return SyntheticPair("translate-blob", source, target, params, truth)


def _rotate_blob(dims, params):
    if len(dims) != 2:
        raise ValueError("rotate-blob is a 2D case")
    pivot = np.asarray(params.setdefault("pivot", [n / 2.0 for n in dims]))
    offset = params.setdefault("offset", min(dims) / 5.0)
    radius = params.setdefault("radius", min(dims) / 7.0)
    theta = params.setdefault("theta", np.pi / 6.0)
    center = pivot + np.array([offset, 0.0])
    source = blob_image(dims, center, radius)
    # target(x) = source(R(-theta) (x - pivot) + pivot)
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[c, s], [-s, c]])
    pts, shape = _voxel_centers(dims)
    pulled = (pts - pivot) @ rot.T + pivot
    r2 = (((pulled - center) / radius) ** 2).sum(axis=1)
    target = _bump(r2).reshape(shape)
    truth = {
        "kind": "rotation",
        "pivot": pivot.tolist(),
        "theta": theta,
        "support_center": center.tolist(),
        "support_radius": radius,
    }
    return SyntheticPair("rotate-blob", source, target, params, truth)


def _two_blobs(dims, params, rng):
    d = len(dims)
    radius = params.setdefault("radius", min(dims) / 7.0)
    gap = params.setdefault("gap", min(dims) / 3.5)
    mid = np.asarray(dims) / 2.0
    e = np.zeros(d)
    e[0] = 1.0
    c1, c2 = mid - gap / 2 * e, mid + gap / 2 * e
    pull = params.setdefault("pull", radius / 2.0)
    source = blob_image(dims, c1, radius) + blob_image(dims, c2, radius)
    target = blob_image(dims, c1 + pull * e, radius) + blob_image(
        dims, c2 - pull * e, radius
    )
    return SyntheticPair("two-blobs", source, target, params, None)


def _checker_detail(dims, params):
    """Envelope blob carrying a checker modulation; the target composes
    the source formula with a known translation plus a small sinusoidal
    wiggle, so coarse stages capture the shift and only finer velocity
    features can resolve the interior detail."""
    d = len(dims)
    center = np.asarray(params.setdefault("center", [n / 2.0 for n in dims]))
    radius = params.setdefault("radius", min(dims) / 3.5)
    waves = params.setdefault("waves", 3.0)
    mod_amp = params.setdefault("mod_amp", 0.5)
    shift = np.asarray(
        params.setdefault("shift", [2.0] + [0.0] * (d - 1)), dtype=float
    )
    wiggle = params.setdefault("wiggle", 1.0)

    k = np.pi * waves / radius

    def intensity(pts):
        q = pts - center
        r2 = ((q / radius) ** 2).sum(axis=1)
        env = _bump(r2)
        checker = np.prod(np.sin(k * q[:, :2]), axis=1) if d >= 2 else 0.0
        return env * (1.0 + mod_amp * checker)

    pts, shape = _voxel_centers(dims)
    source = intensity(pts).reshape(shape)

    # inverse of the ground-truth warp: undo the wiggle then the shift
    q = pts - center - shift
    wig = wiggle * np.sin(np.pi * q[:, ::-1] / radius) * _bump(
        ((q / (1.2 * radius)) ** 2).sum(axis=1)
    )[:, None]
    target = intensity(pts - shift - wig).reshape(shape)
    return SyntheticPair("checker-detail", source, target, params, None)


# -- analytic velocities -------------------------------------------------


def rotation_velocity(mesh, pivot=None, max_angle=1.0, support=None):
    """Radial rotation field: angular speed omega(r) is a smooth bump
    vanishing outside `support`, so trajectories stay on circles and the
    exact flow is a per-radius rotation."""
    pivot = np.asarray(
        pivot if pivot is not None else np.asarray(mesh.dims) / 2.0,
        dtype=float,
    )
    support = support if support is not None else min(mesh.dims) / 2.2

    def omega(r):
        return max_angle * _bump((r / support) ** 2)

    def fn(p):
        q = p - pivot
        r = np.linalg.norm(q, axis=1)
        w = omega(r)
        out = np.zeros_like(p)
        out[:, 0] = -w * q[:, 1]
        out[:, 1] = w * q[:, 0]
        return out

    from .fields import cg_from_function

    field = cg_from_function(mesh, fn, dirichlet_zero=True)
    field._omega = omega  # analytic angular profile, used by oracles
    field._pivot = pivot
    return field


def rotation_exact_pullback(points, pivot, omega, t=1.0):
    """Backward characteristic map of the rotation field: each point is
    rotated by -omega(r) * t about the pivot."""
    q = np.asarray(points, dtype=float) - pivot
    r = np.linalg.norm(q, axis=1)
    ang = -omega(r) * t
    c, s = np.cos(ang), np.sin(ang)
    out = np.empty_like(q)
    out[:, 0] = c * q[:, 0] - s * q[:, 1]
    out[:, 1] = s * q[:, 0] + c * q[:, 1]
    return out + pivot


# -- small simplicial meshes ----------------------------------------------


def make_disk_mesh(center, radius, rings=4, segments=16):
    """Fan-triangulated disk (2D 'ball' mesh) with boundary surface."""
    center = np.asarray(center, dtype=float)
    verts = [center]
    for k in range(1, rings + 1):
        r = radius * k / rings
        ang = 2 * np.pi * np.arange(segments) / segments
        ring = center + r * np.column_stack([np.cos(ang), np.sin(ang)])
        verts.append(ring)
    vertices = np.vstack(verts)

    cells = []
    for j in range(segments):
        cells.append([0, 1 + j, 1 + (j + 1) % segments])
    for k in range(1, rings):
        lo = 1 + (k - 1) * segments
        hi = 1 + k * segments
        for j in range(segments):
            a, b = lo + j, lo + (j + 1) % segments
            c, d = hi + j, hi + (j + 1) % segments
            cells.append([a, c, d])
            cells.append([a, d, b])
    return SimplicialMesh(vertices, np.asarray(cells, dtype=np.int64))


def make_ball_mesh(center, radius, subdivisions=1):
    """Octahedron-based tetrahedral ball: surface triangles refined
    `subdivisions` times and coned to the center."""
    center = np.asarray(center, dtype=float)
    poles = np.array([
        [1, 0, 0], [-1, 0, 0],
        [0, 1, 0], [0, -1, 0],
        [0, 0, 1], [0, 0, -1],
    ], dtype=float)
    faces = [
        (0, 2, 4), (2, 1, 4), (1, 3, 4), (3, 0, 4),
        (2, 0, 5), (1, 2, 5), (3, 1, 5), (0, 3, 5),
    ]
    verts = [p for p in poles]
    tri = list(faces)
    for _ in range(subdivisions):
        tri_new = []
        edge_mid = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in edge_mid:
                m = verts[i] + verts[j]
                m = m / np.linalg.norm(m)
                edge_mid[key] = len(verts)
                verts.append(m)
            return edge_mid[key]

        for a, b, c in tri:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            tri_new += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
        tri = tri_new

    surface = np.asarray(verts) * radius + center
    vertices = np.vstack([center[None, :], surface])
    cells = np.array([[0, a + 1, b + 1, c + 1] for a, b, c in tri],
                     dtype=np.int64)
    mesh = SimplicialMesh(vertices, cells)
    if (mesh.signed_volumes() < 0).any():
        flip = mesh.signed_volumes() < 0
        cells[flip] = cells[flip][:, [0, 2, 1, 3]]
        mesh = SimplicialMesh(vertices, cells)
    return mesh
