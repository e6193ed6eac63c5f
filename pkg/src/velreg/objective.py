"""Discrepancy functionals and the velocity regularizer.

The robust mismatch integrates a Huber penalty of the pointwise image
difference with a degree-4 element rule (the integrand is not
polynomial).  Its gradient differentiates the quadratured value, so
finite-difference checks close to machine precision.  The Tukey
biweight metric is a tracking diagnostic only and is never
differentiated.
"""

from dataclasses import dataclass

import numpy as np

from .assembly import assemble_cg_operators, assemble_dg_mass
from .fields import CgVectorField, DgScalarField
from .quadrature import simplex_rule

MISMATCH_DEGREE = 4


@dataclass(frozen=True)
class ObjectiveConfig:
    """Mismatch threshold, regularization weight, and Tukey constant."""

    delta: float
    gamma: float
    tukey_c: float = 1.0

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.tukey_c <= 0:
            raise ValueError("tukey_c must be positive")


def huber(x, delta):
    """Quadratic core |x| <= delta, linear tails; C1 everywhere."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    return np.where(ax <= delta, 0.5 * x * x, delta * (ax - 0.5 * delta))


def huber_deriv(x, delta):
    if delta <= 0:
        raise ValueError("delta must be positive")
    x = np.asarray(x, dtype=float)
    return np.clip(x, -delta, delta)


def _check_same_mesh(a, b):
    if a.mesh is not b.mesh:
        raise ValueError("fields live on different meshes")


def mismatch(final_state, target, delta):
    """Integral of the Huber penalty of (final_state - target)."""
    _check_same_mesh(final_state, target)
    mesh = final_state.mesh
    bary, w = simplex_rule(mesh.dim, MISMATCH_DEGREE)
    diff = (final_state.coeffs - target.coeffs) @ bary.T  # (nc, nq)
    vals = huber(diff, delta)
    return float(mesh.cell_volumes @ (vals @ w))


def mismatch_grad(final_state, target, delta):
    """Exact derivative of the quadratured mismatch w.r.t. the state
    coefficients, shaped like the DG coefficient array."""
    _check_same_mesh(final_state, target)
    mesh = final_state.mesh
    bary, w = simplex_rule(mesh.dim, MISMATCH_DEGREE)
    diff = (final_state.coeffs - target.coeffs) @ bary.T
    fp = huber_deriv(diff, delta)
    return mesh.cell_volumes[:, None] * ((fp * w[None, :]) @ bary)


def tukey_metric(a, b, c):
    """Domain mean of the Tukey biweight of the difference.

    Saturates at c^2/2 beyond |difference| = c.  Accepts a pair of DG
    fields (quadrature mean over the domain) or plain arrays (mean over
    entries).  Diagnostic only.
    """
    if c <= 0:
        raise ValueError("c must be positive")
    if isinstance(a, DgScalarField) or isinstance(b, DgScalarField):
        _check_same_mesh(a, b)
        mesh = a.mesh
        bary, w = simplex_rule(mesh.dim, MISMATCH_DEGREE)
        diff = (a.coeffs - b.coeffs) @ bary.T
        vals = _tukey(diff, c)
        total = float(mesh.cell_volumes @ (vals @ w))
        return total / float(mesh.cell_volumes.sum())
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(_tukey(a - b, c).mean())


def _tukey(x, c):
    s = np.minimum((x / c) ** 2, 1.0)
    return 0.5 * c * c * (1.0 - (1.0 - s) ** 3)


def regularizer(control_field):
    """Integral of the squared nodal control field (consistent CG1 mass)."""
    values = _cg_values(control_field)
    mass = assemble_cg_operators(control_field.mesh).mass
    return float(sum(values[:, c] @ (mass @ values[:, c])
                     for c in range(values.shape[1])))


def regularizer_grad(control_field):
    """Exact gradient of the regularizer w.r.t. the nodal values."""
    values = _cg_values(control_field)
    mass = assemble_cg_operators(control_field.mesh).mass
    return 2.0 * np.column_stack(
        [mass @ values[:, c] for c in range(values.shape[1])]
    )


def _cg_values(field):
    if not isinstance(field, CgVectorField):
        raise TypeError("regularizer expects a CG vector field")
    return field.values


def l2_discrepancy(a, b):
    """L2 norm of the difference of two DG fields (exact, via DG mass)."""
    _check_same_mesh(a, b)
    mass = assemble_dg_mass(a.mesh)
    e = a.coeffs - b.coeffs
    val = float(np.einsum("ci,ci->", e, mass.apply(e)))
    return float(np.sqrt(max(val, 0.0)))


def default_delta(target, fraction=0.1):
    """Scale-relative Huber threshold: fraction of the 1st-to-99th
    percentile intensity range of the target."""
    vals = target.coeffs if isinstance(target, DgScalarField) else np.asarray(target)
    lo, hi = np.percentile(vals, [1.0, 99.0])
    span = float(hi - lo)
    if span <= 0:
        return fraction
    return fraction * span
