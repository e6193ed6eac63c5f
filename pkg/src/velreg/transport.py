"""DG1 upwind transport: spatial operator, smoothed flux, RK2 stepping.

The semi-discrete scheme is M dphi/dt = r(phi) with

    r(psi) = sum_E int div(v) psi phi + sum_E int phi v . grad(psi)
           - sum_F int [[psi]] flux(phi|E1, phi|E2, v . n_F)

over cells E and interior facets F.  Boundary facets carry no flux terms
because the velocity has zero boundary values.  For fixed velocity the
operator is linear in phi and is assembled once as a sparse matrix; the
same object exposes the derivative of pairings w.r.t. the velocity,
which the discrete adjoint consumes.
"""

import warnings
import weakref
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .assembly import FACET_DEGREE, assemble_dg_mass
from .errors import NumericBlowupError
from .fields import CgVectorField, DgScalarField
from .quadrature import simplex_rule

DEFAULT_EPSILON = 1e-2
EXP_CLAMP = 40.0


def smoothed_max(epsilon, x):
    """sigma_eps(x) * x, a smooth surrogate for max(0, x).

    The exponent is clamped at +-40, which reproduces the saturated
    limits exactly in double precision.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive for the smoothed max")
    x = np.asarray(x, dtype=float)
    z = np.clip(x / epsilon, -EXP_CLAMP, EXP_CLAMP)
    return x / (1.0 + np.exp(-z))


def smoothed_max_deriv(epsilon, x):
    """Derivative of smoothed_max w.r.t. x."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive for the smoothed max")
    x = np.asarray(x, dtype=float)
    z = np.clip(x / epsilon, -EXP_CLAMP, EXP_CLAMP)
    s = 1.0 / (1.0 + np.exp(-z))
    return s + x * s * (1.0 - s) / epsilon


def numerical_flux(phi_e1, phi_e2, v_dot_n, epsilon):
    """Facet flux: exact upwind for epsilon = 0, smoothed otherwise."""
    phi_e1 = np.asarray(phi_e1, dtype=float)
    phi_e2 = np.asarray(phi_e2, dtype=float)
    v_dot_n = np.asarray(v_dot_n, dtype=float)
    if epsilon == 0:
        return phi_e1 * np.maximum(v_dot_n, 0.0) + phi_e2 * np.minimum(
            v_dot_n, 0.0
        )
    return phi_e1 * smoothed_max(epsilon, v_dot_n) - phi_e2 * smoothed_max(
        epsilon, -v_dot_n
    )


@dataclass(eq=False)
class TransportProblem:
    """Transport setup: mesh, stationary velocity, horizon, and flux width.

    velocity may be None for a template that is completed later via
    with_velocity().
    """

    mesh: object
    velocity: CgVectorField | None
    T: float = 1.0
    N: int = 100
    epsilon: float = DEFAULT_EPSILON
    cfl_threshold: float = 0.25

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.T <= 0:
            raise ValueError("T must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.velocity is not None:
            if self.velocity.mesh is not self.mesh:
                raise ValueError("velocity lives on a different mesh")
            if not self.velocity.dirichlet_zero:
                raise ValueError(
                    "transport velocity must have zero boundary values"
                )

    @property
    def dt(self):
        return self.T / self.N

    def with_velocity(self, velocity):
        return replace(self, velocity=velocity)


@dataclass(eq=False)
class Trajectory:
    """Recorded forward states: N+1 snapshots plus the N RK2 midpoints."""

    states: list
    midpoints: list
    dt: float

    @property
    def stored_arrays(self):
        return len(self.states) + len(self.midpoints)


@dataclass(eq=False)
class CflReport:
    number: float
    dt: float
    v_max: float
    h_min: float
    threshold: float
    advisory: bool


@dataclass(eq=False)
class TransportResult:
    final: DgScalarField
    trajectory: Trajectory | None
    cfl: CflReport


class _Workspace:
    """Static per-mesh assembly data for the transport operator."""

    def __init__(self, mesh):
        d = mesh.dim
        ncv = d + 1
        nc = mesh.num_cells
        ndof = nc * ncv

        # facet quadrature on the (d-1)-simplex
        fb, fw = simplex_rule(d - 1, FACET_DEGREE)
        self.facet_basis = fb          # (nq, d)
        self.facet_weights = fw        # (nq,)
        self.facet_nn = np.einsum("q,qj,qk->qjk", fw, fb, fb)

        el = np.arange(ndof).reshape(nc, ncv)
        el_rows = np.repeat(el, ncv, axis=1).ravel()
        el_cols = np.tile(el, (1, ncv)).ravel()

        dof1 = mesh.facet_cells[:, 0:1] * ncv + mesh.facet_local[:, 0]
        dof2 = mesh.facet_cells[:, 1:2] * ncv + mesh.facet_local[:, 1]
        self.facet_dof1 = dof1
        self.facet_dof2 = dof2

        def block(rows, cols):
            r = np.repeat(rows, d, axis=1).ravel()
            c = np.tile(cols, (1, d)).ravel()
            return r, c

        r_aa, c_aa = block(dof1, dof1)
        r_ab, c_ab = block(dof1, dof2)
        r_ba, c_ba = block(dof2, dof1)
        r_bb, c_bb = block(dof2, dof2)
        rows = np.concatenate([el_rows, r_aa, r_ab, r_ba, r_bb])
        cols = np.concatenate([el_cols, c_aa, c_ab, c_ba, c_bb])

        self.ndof = ndof
        self.n_entries = rows.size
        self.csr = _SummedPattern(rows, cols, ndof)
        self.csr_t = _SummedPattern(cols, rows, ndof)


class _SummedPattern:
    """CSR pattern with duplicate entries pre-merged.

    Repeated assemblies only rebuild the value vector: entry values are
    summed into their slot with one bincount, which keeps assembly cost
    linear and the summation order fixed (deterministic reductions).
    """

    def __init__(self, rows, cols, n):
        order = np.lexsort((cols, rows))
        rs, cs = rows[order], cols[order]
        new = np.empty(rs.size, dtype=bool)
        new[0] = True
        new[1:] = (rs[1:] != rs[:-1]) | (cs[1:] != cs[:-1])
        slot_sorted = np.cumsum(new) - 1
        self.slot = np.empty(rows.size, dtype=np.int64)
        self.slot[order] = slot_sorted
        self.nnz = int(slot_sorted[-1]) + 1
        self.indices = cs[new]
        urows = rs[new]
        self.indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(self.indptr, urows + 1, 1)
        self.indptr = np.cumsum(self.indptr)
        self.n = n

    def build(self, values):
        data = np.bincount(self.slot, weights=values, minlength=self.nnz)
        return sp.csr_matrix(
            (data, self.indices, self.indptr), shape=(self.n, self.n)
        )


_workspaces = weakref.WeakKeyDictionary()


def _workspace(mesh):
    ws = _workspaces.get(mesh)
    if ws is None:
        ws = _Workspace(mesh)
        _workspaces[mesh] = ws
    return ws


class TransportSolver:
    """Assembled transport operator for one velocity field.

    Exposes the residual, RK2 stepping, the transpose action, and the
    derivative of <w, r(phi)> with respect to nodal velocity values.
    """

    def __init__(self, problem):
        if problem.velocity is None:
            raise ValueError("problem has no velocity attached")
        self.problem = problem
        mesh = problem.mesh
        self.mesh = mesh
        self.ws = _workspace(mesh)
        self.mass = assemble_dg_mass(mesh)
        d = mesh.dim
        v = problem.velocity.values
        eps = problem.epsilon

        g = mesh.grad_bary                     # (nc, d+1, d)
        v_cell = v[mesh.cells]                 # (nc, d+1, d)
        self._div = np.einsum("cmd,cmd->c", v_cell, g)
        self._vdotg = np.einsum("cjd,cmd->cjm", g, v_cell)
        m_loc = self.mass.blocks
        elem = self._div[:, None, None] * m_loc + self._vdotg @ m_loc

        fb = self.ws.facet_basis
        n = mesh.facet_normals
        vn = np.einsum("fjc,fc->fj", v[mesh.facet_vertices], n)
        u = vn @ fb.T                          # (nf, nq)
        self._u = u
        if eps == 0:
            a = np.maximum(u, 0.0)
            b = np.maximum(-u, 0.0)
            self._da = None
            self._db = None
        else:
            a = smoothed_max(eps, u)
            b = smoothed_max(eps, -u)
            self._da = smoothed_max_deriv(eps, u)
            self._db = smoothed_max_deriv(eps, -u)

        af = mesh.facet_areas[:, None, None]
        ga = af * np.einsum("qjk,fq->fjk", self.ws.facet_nn, a)
        gb = af * np.einsum("qjk,fq->fjk", self.ws.facet_nn, b)

        values = np.concatenate([
            elem.ravel(),
            (-ga).ravel(),
            gb.ravel(),
            ga.ravel(),
            (-gb).ravel(),
        ])
        self.matrix = self.ws.csr.build(values)
        self.matrix_t = self.ws.csr_t.build(values)

    # -- linear actions -------------------------------------------------

    def residual(self, coeffs):
        """r(phi) as cell-major coefficients; M dphi/dt = r."""
        shape = coeffs.shape
        return (self.matrix @ coeffs.ravel()).reshape(shape)

    def residual_transpose(self, coeffs):
        shape = coeffs.shape
        return (self.matrix_t @ coeffs.ravel()).reshape(shape)

    def mass_solve(self, coeffs):
        return self.mass.solve(coeffs)

    def step(self, coeffs, dt):
        """One explicit-midpoint step; returns (next, midpoint stage)."""
        mid = coeffs + (0.5 * dt) * self.mass_solve(self.residual(coeffs))
        nxt = coeffs + dt * self.mass_solve(self.residual(mid))
        return nxt, mid

    def step_transpose(self, lam, dt):
        """Transpose of the linear step map applied to lam."""
        q1 = self.residual_transpose(self.mass_solve(lam))
        q2 = self.residual_transpose(self.mass_solve(dt * q1))
        return lam + dt * q1 + (0.5 * dt) * q2

    # -- velocity derivative --------------------------------------------

    def pairing_velocity_gradient(self, w, phi):
        """d/dv of <w, r(phi)> as nodal velocity gradient (nv, d).

        Requires epsilon > 0: the exact upwind flux is not differentiable
        where v . n = 0.
        """
        if self._da is None:
            raise ValueError(
                "velocity gradient undefined for epsilon = 0; "
                "use a positive smoothing width"
            )
        mesh = self.mesh
        d = mesh.dim
        nv = mesh.num_vertices
        m_loc_phi = self.mass.apply(phi)                    # (nc, d+1)
        t1 = np.einsum("ci,ci->c", w, m_loc_phi)
        u_dir = np.einsum("cj,cjd->cd", w, mesh.grad_bary)  # (nc, d)
        contrib = t1[:, None, None] * mesh.grad_bary + np.einsum(
            "cd,cm->cmd", u_dir, m_loc_phi
        )
        grad = np.empty((nv, d))
        cells_flat = mesh.cells.ravel()
        for c in range(d):
            grad[:, c] = np.bincount(
                cells_flat, weights=contrib[:, :, c].ravel(), minlength=nv
            )

        fb = self.ws.facet_basis
        fw = self.ws.facet_weights
        loc = mesh.facet_local
        fc = mesh.facet_cells
        w1 = np.take_along_axis(w[fc[:, 0]], loc[:, 0], axis=1)
        w2 = np.take_along_axis(w[fc[:, 1]], loc[:, 1], axis=1)
        p1 = np.take_along_axis(phi[fc[:, 0]], loc[:, 0], axis=1)
        p2 = np.take_along_axis(phi[fc[:, 1]], loc[:, 1], axis=1)
        jump_w = (w1 - w2) @ fb.T                           # (nf, nq)
        tr1 = p1 @ fb.T
        tr2 = p2 @ fb.T
        coeff = (
            -mesh.facet_areas[:, None]
            * fw[None, :]
            * jump_w
            * (tr1 * self._da + tr2 * self._db)
        )
        per_vertex = coeff @ fb                             # (nf, d)
        verts_flat = mesh.facet_vertices.ravel()
        for c in range(d):
            grad[:, c] += np.bincount(
                verts_flat,
                weights=(per_vertex * mesh.facet_normals[:, c : c + 1]).ravel(),
                minlength=nv,
            )
        return grad

    # -- time integration ------------------------------------------------

    def solve(self, initial, record=False):
        problem = self.problem
        dt = problem.dt
        phi = np.array(initial, dtype=float, copy=True)
        states = [phi.copy()] if record else None
        midpoints = [] if record else None
        for k in range(problem.N):
            phi, mid = self.step(phi, dt)
            if not np.isfinite(phi).all():
                finite = phi[np.isfinite(phi)]
                peak = float(np.abs(finite).max()) if finite.size else np.inf
                raise NumericBlowupError(
                    f"transport blew up at step {k} (max |state| {peak:.3e})",
                    step=k,
                    max_abs=peak,
                )
            if record:
                states.append(phi.copy())
                midpoints.append(mid)
        trajectory = (
            Trajectory(states=states, midpoints=midpoints, dt=dt)
            if record
            else None
        )
        return phi, trajectory


def spatial_operator(phi, problem):
    """Assembled residual r(phi) with M dphi/dt = r, as a DG field."""
    if phi.mesh is not problem.mesh:
        raise ValueError("state and problem live on different meshes")
    solver = TransportSolver(problem)
    return DgScalarField(problem.mesh, solver.residual(phi.coeffs))


def step_rk2(phi, problem, dt=None):
    """One explicit-midpoint step of size dt (default problem.dt)."""
    if phi.mesh is not problem.mesh:
        raise ValueError("state and problem live on different meshes")
    dt = problem.dt if dt is None else float(dt)
    if dt <= 0:
        raise ValueError("dt must be positive")
    solver = TransportSolver(problem)
    nxt, _ = solver.step(phi.coeffs, dt)
    if not np.isfinite(nxt).all():
        raise NumericBlowupError("transport step produced non-finite values",
                                 step=0)
    return DgScalarField(problem.mesh, nxt)


def cfl_number(problem, threshold=None):
    """Advisory CFL number dt * max|v| / h_min.

    h_min is the minimum cell in-diameter (twice the inradius).  The
    condition is not enforced; a warning is emitted above the threshold.
    """
    threshold = problem.cfl_threshold if threshold is None else threshold
    v_max = problem.velocity.max_norm() if problem.velocity is not None else 0.0
    number = problem.dt * v_max / problem.mesh.h_min
    advisory = number > threshold
    if advisory:
        warnings.warn(
            f"CFL number {number:.3g} exceeds advisory threshold "
            f"{threshold:.3g}; the explicit scheme may be inaccurate",
            RuntimeWarning,
            stacklevel=2,
        )
    return CflReport(
        number=number,
        dt=problem.dt,
        v_max=v_max,
        h_min=problem.mesh.h_min,
        threshold=threshold,
        advisory=advisory,
    )


def solve_transport(initial, problem, record=False):
    """Run N RK2 steps; optionally record the trajectory for the adjoint."""
    if initial.mesh is not problem.mesh:
        raise ValueError("state and problem live on different meshes")
    cfl = cfl_number(problem)
    solver = TransportSolver(problem)
    final, trajectory = solver.solve(initial.coeffs, record=record)
    return TransportResult(
        final=DgScalarField(problem.mesh, final),
        trajectory=trajectory,
        cfl=cfl,
    )
