"""Control chain below the PDE: Euclidean control vector -> nodal
control field (diagonal Cholesky scaling of the lumped mass) -> smoothed
velocity (elliptic solve), with the transpose of every link.

The elliptic operator alpha*M + beta*K gets homogeneous Dirichlet rows by
symmetric row/column elimination, which keeps it SPD so one conjugate
gradient routine serves both the forward and the adjoint solve.  The
three velocity components are independent scalar solves.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .assembly import assemble_cg_operators
from .errors import SolverError
from .fields import CgVectorField


@dataclass(frozen=True)
class SmootherConfig:
    """Coefficients of alpha*v - beta*lap(v) = control field, plus CG
    solve controls. alpha, beta >= 0 and not both zero."""

    alpha: float
    beta: float
    cg_tol: float = 1e-10
    cg_maxit: int = 10_000
    jacobi: bool = False

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.alpha + self.beta <= 0:
            raise ValueError("alpha + beta must be positive")
        if not 0.0 < self.cg_tol < 1.0:
            raise ValueError("cg_tol must lie in (0, 1)")
        if self.cg_maxit < 1:
            raise ValueError("cg_maxit must be >= 1")


def conjugate_gradient(matvec, b, tol, maxit, diag_precond=None, x0=None):
    """Preconditioned CG to relative residual tol; raises SolverError on
    non-convergence (with the residual it got stuck at)."""
    b = np.asarray(b, dtype=float)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - matvec(x) if x0 is not None else b.copy()
    z = r * diag_precond if diag_precond is not None else r
    p = z.copy()
    rz = float(r @ z)
    for _ in range(maxit):
        if np.linalg.norm(r) <= tol * bnorm:
            return x
        ap = matvec(p)
        alpha = rz / float(p @ ap)
        x = x + alpha * p
        r = r - alpha * ap
        z = r * diag_precond if diag_precond is not None else r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = float(np.linalg.norm(r) / bnorm)
    if res <= tol:
        return x
    raise SolverError(
        f"CG stalled at relative residual {res:.3e} after {maxit} iterations",
        residual=res,
        iterations=maxit,
    )


class ControlChain:
    """Precomputed operators for one (mesh, smoother config) pair."""

    def __init__(self, mesh, config):
        self.mesh = mesh
        self.config = config
        ops = assemble_cg_operators(mesh)
        self.mass = ops.mass
        self.lumped_mass = ops.lumped_mass
        self.scale = np.sqrt(ops.lumped_mass)

        interior = ~mesh.boundary_vertex_mask
        self.interior = interior
        nv = mesh.num_vertices
        keep = sp.diags(interior.astype(float))
        raw = config.alpha * ops.mass + config.beta * ops.stiffness
        bnd = sp.diags((~interior).astype(float))
        self.operator = (keep @ raw @ keep + bnd).tocsr()
        self.precond = 1.0 / self.operator.diagonal() if config.jacobi else None

    @property
    def n_controls(self):
        return self.mesh.num_vertices * self.mesh.dim

    def pack(self, nodal):
        """Nodal (nv, d) array -> flat control layout (vertex-major,
        interleaved components)."""
        return np.ascontiguousarray(nodal).ravel()

    def unpack(self, flat):
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.n_controls,):
            raise ValueError(
                f"control length {flat.shape}, expected ({self.n_controls},)"
            )
        return flat.reshape(self.mesh.num_vertices, self.mesh.dim)

    # -- diagonal Cholesky scaling ---------------------------------------

    def cholesky_scale(self, control):
        """Control vector -> nodal control field values (nv, d)."""
        return self.unpack(control) / self.scale[:, None]

    def cholesky_scale_adjoint(self, nodal):
        """Transpose of the scaling (the factor is diagonal, hence its
        own transpose); returns a flat control-shaped vector."""
        return self.pack(np.asarray(nodal) / self.scale[:, None])

    # -- elliptic smoothing ------------------------------------------------

    def _solve(self, rhs):
        return conjugate_gradient(
            lambda x: self.operator @ x,
            rhs,
            tol=self.config.cg_tol,
            maxit=self.config.cg_maxit,
            diag_precond=self.precond,
        )

    def smooth_velocity(self, nodal):
        """Solve the elliptic problem per component; the result has
        exactly zero boundary values.

        Boundary entries of the control field are eliminated together
        with the Dirichlet rows and columns, so they never influence
        the velocity.
        """
        nodal = np.asarray(nodal, dtype=float)
        out = np.empty_like(nodal)
        for c in range(nodal.shape[1]):
            comp = np.where(self.interior, nodal[:, c], 0.0)
            rhs = self.mass @ comp
            rhs[~self.interior] = 0.0
            out[:, c] = self._solve(rhs)
        out[~self.interior] = 0.0
        return CgVectorField(self.mesh, out, dirichlet_zero=True)

    def smooth_velocity_adjoint(self, nodal):
        """Transpose: solve with the same symmetric operator, zero the
        eliminated rows, then apply the (symmetric) mass."""
        nodal = np.asarray(nodal, dtype=float)
        out = np.empty_like(nodal)
        for c in range(nodal.shape[1]):
            y = self._solve(nodal[:, c])
            y[~self.interior] = 0.0
            out[:, c] = self.mass @ y
        out[~self.interior] = 0.0
        return out

    # -- full chain ---------------------------------------------------------

    def control_to_velocity(self, control):
        return self.smooth_velocity(self.cholesky_scale(control))

    def control_to_velocity_adjoint(self, nodal):
        return self.cholesky_scale_adjoint(self.smooth_velocity_adjoint(nodal))


def cholesky_scale(control, lumped_mass):
    """Standalone scaling: divide vertex-major interleaved controls by
    sqrt of the lumped mass entries."""
    lumped_mass = np.asarray(lumped_mass, dtype=float)
    if (lumped_mass <= 0).any():
        raise ValueError("lumped mass must be strictly positive")
    control = np.asarray(control, dtype=float)
    nv = lumped_mass.shape[0]
    d = control.size // nv
    if control.size != nv * d:
        raise ValueError("control length incompatible with lumped mass")
    return control.reshape(nv, d) / np.sqrt(lumped_mass)[:, None]


def smooth_velocity(control_field, mesh, config):
    """One-off elliptic smoothing of a nodal control field."""
    return ControlChain(mesh, config).smooth_velocity(np.asarray(control_field))


def control_to_velocity(control, mesh, config):
    """Full chain: flat control vector -> smoothed velocity field."""
    return ControlChain(mesh, config).control_to_velocity(control)
