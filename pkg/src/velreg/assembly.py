"""Finite element assembly on box meshes: DG mass blocks, CG mass /
stiffness / lumped mass.

Element integrals use a simplex rule exact for degree 3; the integrands
appearing in the transport scheme are polynomials of degree <= 2, so
assembly is exact up to roundoff.  Assembled operators are cached per
mesh and immutable.
"""

import weakref
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .quadrature import simplex_rule

ELEMENT_DEGREE = 3
FACET_DEGREE = 4

_dg_cache = weakref.WeakKeyDictionary()
_cg_cache = weakref.WeakKeyDictionary()


class DgMassMatrix:
    """Block-diagonal DG1 mass operator with per-block inverses."""

    def __init__(self, mesh):
        bary, w = simplex_rule(mesh.dim, ELEMENT_DEGREE)
        ref = np.einsum("q,qi,qj->ij", w, bary, bary)
        self.mesh = mesh
        self._ref = ref
        self._ref_inv = np.linalg.inv(ref)
        self._vol = mesh.cell_volumes

    @property
    def blocks(self):
        """(nc, d+1, d+1) per-cell mass blocks."""
        return self._vol[:, None, None] * self._ref

    @property
    def block_inverses(self):
        return self._ref_inv / self._vol[:, None, None]

    def apply(self, coeffs):
        """M x for cell-major coefficients (nc, d+1)."""
        return self._vol[:, None] * (coeffs @ self._ref.T)

    def solve(self, coeffs):
        """M^{-1} x, block by block."""
        return (coeffs @ self._ref_inv.T) / self._vol[:, None]


def assemble_dg_mass(mesh):
    """DG1 mass operator for the mesh (cached)."""
    op = _dg_cache.get(mesh)
    if op is None:
        if (mesh.cell_volumes <= 0).any():
            raise ValueError("mesh has degenerate cells")
        op = DgMassMatrix(mesh)
        _dg_cache[mesh] = op
    return op


@dataclass(eq=False)
class CgOperators:
    """CG1 mass, stiffness, and lumped mass (row sums of the mass)."""

    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    lumped_mass: np.ndarray


def assemble_cg_operators(mesh):
    """Assemble CG1 operators on the mesh (cached).

    The stiffness matrix is returned without boundary conditions; its
    kernel is the constant vector.
    """
    ops = _cg_cache.get(mesh)
    if ops is not None:
        return ops
    if (mesh.cell_volumes <= 0).any():
        raise ValueError("mesh has degenerate cells")

    bary, w = simplex_rule(mesh.dim, ELEMENT_DEGREE)
    ref_mass = np.einsum("q,qi,qj->ij", w, bary, bary)
    vol = mesh.cell_volumes

    mass_loc = vol[:, None, None] * ref_mass
    stiff_loc = vol[:, None, None] * np.einsum(
        "cid,cjd->cij", mesh.grad_bary, mesh.grad_bary
    )

    nv = mesh.num_vertices
    ncv = mesh.dim + 1
    rows = np.repeat(mesh.cells, ncv, axis=1).ravel()
    cols = np.tile(mesh.cells, (1, ncv)).ravel()
    mass = sp.coo_matrix(
        (mass_loc.ravel(), (rows, cols)), shape=(nv, nv)
    ).tocsr()
    stiffness = sp.coo_matrix(
        (stiff_loc.ravel(), (rows, cols)), shape=(nv, nv)
    ).tocsr()
    lumped = np.asarray(mass.sum(axis=1)).ravel()
    if (lumped <= 0).any():
        raise ValueError("lumped mass has non-positive entries")
    lumped.flags.writeable = False

    ops = CgOperators(mass=mass, stiffness=stiffness, lumped_mass=lumped)
    _cg_cache[mesh] = ops
    return ops
