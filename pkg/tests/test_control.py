import numpy as np
import pytest

from velreg.assembly import assemble_cg_operators
from velreg.control import (
    ControlChain,
    SmootherConfig,
    cholesky_scale,
    conjugate_gradient,
    control_to_velocity,
    smooth_velocity,
)
from velreg.errors import SolverError
from velreg.mesh import build_box_mesh


@pytest.fixture
def mesh():
    return build_box_mesh((8, 8))


def test_smoother_config_validation():
    with pytest.raises(ValueError):
        SmootherConfig(alpha=0.0, beta=0.0)
    with pytest.raises(ValueError):
        SmootherConfig(alpha=-1.0, beta=1.0)
    with pytest.raises(ValueError):
        SmootherConfig(alpha=1.0, beta=1.0, cg_tol=2.0)
    SmootherConfig(alpha=0.0, beta=1.0)


def test_cholesky_factor_identity(mesh):
    ml = assemble_cg_operators(mesh).lumped_mass
    rng = np.random.default_rng(0)
    x = rng.standard_normal(ml.shape[0])
    c = np.sqrt(ml)
    np.testing.assert_allclose(c * (c * x), ml * x, atol=1e-12)


def test_cholesky_scale_zero_and_uniform(mesh):
    ml = assemble_cg_operators(mesh).lumped_mass
    n = 2 * mesh.num_vertices
    np.testing.assert_array_equal(cholesky_scale(np.zeros(n), ml), 0.0)

    # interior vertices of a unit-pixel 2D grid all own the same lumped
    # mass, so the scaling is one constant factor there
    ones = cholesky_scale(np.ones(n), ml)
    interior = ~mesh.boundary_vertex_mask
    inner_vals = ones[interior]
    assert np.ptp(inner_vals) == 0.0
    assert inner_vals[0, 0] == pytest.approx(1.0 / np.sqrt(ml[interior][0]))

    # doubling the resolution leaves unit-pixel interior entries unchanged
    mesh2 = build_box_mesh((16, 16))
    ml2 = assemble_cg_operators(mesh2).lumped_mass
    assert ml2[~mesh2.boundary_vertex_mask][0] == pytest.approx(
        ml[interior][0], rel=1e-12
    )


def test_cholesky_scale_rejects_bad_mass():
    with pytest.raises(ValueError):
        cholesky_scale(np.zeros(4), np.array([1.0, -1.0]))


def test_conjugate_gradient_monotone_energy_error():
    # the A-norm of the error decreases monotonically
    rng = np.random.default_rng(1)
    a = rng.standard_normal((30, 30))
    A = a @ a.T + 30 * np.eye(30)
    b = rng.standard_normal(30)
    x_star = np.linalg.solve(A, b)

    errs = []
    x = np.zeros(30)
    r = b.copy()
    p = r.copy()
    rz = r @ r
    for _ in range(25):
        e = x - x_star
        errs.append(float(e @ (A @ e)))
        ap = A @ p
        alpha = rz / (p @ ap)
        x = x + alpha * p
        r = r - alpha * ap
        rz_new = r @ r
        p = r + (rz_new / rz) * p
        rz = rz_new
    assert all(b <= a * (1 + 1e-12) for a, b in zip(errs, errs[1:]))

    sol = conjugate_gradient(lambda v: A @ v, b, tol=1e-12, maxit=200)
    np.testing.assert_allclose(sol, x_star, atol=1e-9)


def test_conjugate_gradient_nonconvergence_raises():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((40, 40))
    A = a @ a.T + 1e-6 * np.eye(40)
    b = rng.standard_normal(40)
    with pytest.raises(SolverError) as exc:
        conjugate_gradient(lambda v: A @ v, b, tol=1e-14, maxit=2)
    assert exc.value.residual is not None


def test_smooth_velocity_zero_and_identity(mesh):
    chain = ControlChain(mesh, SmootherConfig(alpha=1.0, beta=0.0))
    zero = chain.smooth_velocity(np.zeros((mesh.num_vertices, 2)))
    np.testing.assert_array_equal(zero.values, 0.0)

    # alpha=1, beta=0: the mass cancels and interior values pass through
    rng = np.random.default_rng(3)
    tv = rng.standard_normal((mesh.num_vertices, 2))
    v = chain.smooth_velocity(tv)
    interior = ~mesh.boundary_vertex_mask
    np.testing.assert_allclose(v.values[interior], tv[interior], atol=1e-8)
    np.testing.assert_array_equal(v.values[~interior], 0.0)
    assert v.dirichlet_zero


def test_smooth_velocity_manufactured_solution_order():
    # alpha=0, beta=1 with exact solution prod(sin(pi x_i / n)) per
    # component; nodal errors drop by about 4x per mesh doubling
    errs = []
    for n in (8, 16, 32):
        mesh = build_box_mesh((n, n))
        chain = ControlChain(mesh, SmootherConfig(alpha=0.0, beta=1.0))
        dims = np.asarray(mesh.dims, float)

        def exact(p):
            return np.prod(np.sin(np.pi * p / dims), axis=1)

        lam = np.pi ** 2 * (1.0 / dims[0] ** 2 + 1.0 / dims[1] ** 2)
        rhs = lam * exact(mesh.vertices)
        tv = np.column_stack([rhs, rhs])
        v = chain.smooth_velocity(tv)
        u = exact(mesh.vertices)
        ml = assemble_cg_operators(mesh).lumped_mass
        err = np.sqrt(float(ml @ (v.values[:, 0] - u) ** 2))
        norm = np.sqrt(float(ml @ u ** 2))
        errs.append(err / norm)
    assert errs[0] / errs[1] > 3.4
    assert errs[1] / errs[2] > 3.4


@pytest.mark.parametrize("alpha,beta", [(0.0, 1.0), (1.0, 0.0), (0.5, 0.5)])
def test_adjoint_pairing_identities(mesh, alpha, beta):
    # tight cg_tol so solver inexactness stays below the pairing tolerance
    chain = ControlChain(mesh, SmootherConfig(alpha=alpha, beta=beta,
                                              cg_tol=1e-13))
    rng = np.random.default_rng(4)
    nv, d = mesh.num_vertices, mesh.dim

    # scaling link
    x = rng.standard_normal(nv * d)
    w = rng.standard_normal((nv, d))
    lhs = float((chain.cholesky_scale(x) * w).sum())
    rhs = float(x @ chain.cholesky_scale_adjoint(w))
    assert lhs == pytest.approx(rhs, abs=1e-10 * max(1, abs(lhs)))

    # smoothing link
    tv = rng.standard_normal((nv, d))
    w2 = rng.standard_normal((nv, d))
    lhs = float((chain.smooth_velocity(tv).values * w2).sum())
    rhs = float((tv * chain.smooth_velocity_adjoint(w2)).sum())
    assert lhs == pytest.approx(rhs, rel=1e-10)

    # full composition
    xc = rng.standard_normal(nv * d)
    wc = rng.standard_normal((nv, d))
    lhs = float((chain.control_to_velocity(xc).values * wc).sum())
    rhs = float(xc @ chain.control_to_velocity_adjoint(wc))
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_chain_matches_dense_solve():
    mesh = build_box_mesh((8, 8))
    config = SmootherConfig(alpha=0.0, beta=1.0)
    chain = ControlChain(mesh, config)
    rng = np.random.default_rng(5)
    control = rng.standard_normal(chain.n_controls)
    v = chain.control_to_velocity(control)

    dense = chain.operator.toarray()
    tv = chain.cholesky_scale(control)
    tv[~chain.interior] = 0.0
    ref = np.empty_like(tv)
    for c in range(2):
        rhs = chain.mass @ tv[:, c]
        rhs[~chain.interior] = 0.0
        ref[:, c] = np.linalg.solve(dense, rhs)
    np.testing.assert_allclose(v.values, ref, atol=1e-9)

    # smoothing is bounded: max-norm below the dense inverse bound
    bound = np.abs(np.linalg.inv(dense)).sum(axis=1).max()
    rhs_max = max(
        np.abs(chain.mass @ tv[:, c]).max() for c in range(2)
    )
    assert np.abs(v.values).max() <= bound * rhs_max * (1 + 1e-12)


def test_operator_spd(mesh):
    for alpha, beta in [(0.0, 1.0), (1.0, 0.0), (0.3, 0.7)]:
        chain = ControlChain(mesh, SmootherConfig(alpha=alpha, beta=beta))
        A = chain.operator
        assert abs(A - A.T).max() < 1e-13
        rng = np.random.default_rng(6)
        for _ in range(4):
            x = rng.standard_normal(mesh.num_vertices)
            assert x @ (A @ x) > 0


def test_jacobi_preconditioner_agrees(mesh):
    rng = np.random.default_rng(7)
    tv = rng.standard_normal((mesh.num_vertices, 2))
    plain = ControlChain(mesh, SmootherConfig(0.0, 1.0)).smooth_velocity(tv)
    jac = ControlChain(
        mesh, SmootherConfig(0.0, 1.0, jacobi=True)
    ).smooth_velocity(tv)
    np.testing.assert_allclose(plain.values, jac.values, atol=1e-8)


def test_module_level_wrappers(mesh):
    config = SmootherConfig(alpha=0.0, beta=1.0)
    rng = np.random.default_rng(8)
    control = rng.standard_normal(mesh.num_vertices * 2)
    v1 = control_to_velocity(control, mesh, config)
    ml = assemble_cg_operators(mesh).lumped_mass
    v2 = smooth_velocity(cholesky_scale(control, ml), mesh, config)
    np.testing.assert_allclose(v1.values, v2.values, atol=1e-12)
