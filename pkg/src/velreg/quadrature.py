"""Quadrature rules on reference simplices.

Rules are returned in barycentric form with weights normalized to sum to
one, so that an integral over a physical simplex E is approximated by
``measure(E) * sum(w_q * f(x_q))``.  Rules are built by the conical
product construction (Gauss-Legendre crossed with Gauss-Jacobi), which
yields strictly positive weights at any requested degree.
"""

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


def _gauss01(n, alpha=0.0):
    # Nodes/weights for int_0^1 (1-x)^alpha f(x) dx.
    x, w = roots_jacobi(n, alpha, 0.0)
    return 0.5 * (x + 1.0), w / 2.0 ** (alpha + 1.0)


@lru_cache(maxsize=None)
def simplex_rule(dim, degree):
    """Quadrature rule exact for polynomials of total degree `degree`.

    Returns (bary, weights): barycentric coordinates of shape
    (nq, dim + 1) and weights of shape (nq,) summing to 1.
    """
    if dim < 1 or dim > 3:
        raise ValueError(f"unsupported simplex dimension {dim}")
    if degree < 0:
        raise ValueError("degree must be non-negative")
    n = max(1, (degree + 2) // 2)  # Gauss rules are exact to 2n - 1

    if dim == 1:
        x, w = _gauss01(n)
        bary = np.column_stack([1.0 - x, x])
        weights = w
    elif dim == 2:
        xi, wx = _gauss01(n)
        eta, we = _gauss01(n, alpha=1.0)
        x = np.outer(1.0 - eta, xi).ravel()
        y = np.repeat(eta, n)
        bary = np.column_stack([1.0 - x - y, x, y])
        weights = np.outer(we, wx).ravel() / 0.5
    else:
        xi, wx = _gauss01(n)
        eta, we = _gauss01(n, alpha=1.0)
        zeta, wz = _gauss01(n, alpha=2.0)
        Z, E, X = np.meshgrid(zeta, eta, xi, indexing="ij")
        x = (X * (1.0 - E) * (1.0 - Z)).ravel()
        y = (E * (1.0 - Z)).ravel()
        z = Z.ravel()
        bary = np.column_stack([1.0 - x - y - z, x, y, z])
        weights = np.einsum("i,j,k->ijk", wz, we, wx).ravel() / (1.0 / 6.0)

    bary.flags.writeable = False
    weights.flags.writeable = False
    return bary, weights


def simplex_monomial_integral(dim, alpha):
    """Exact mean value of a barycentric monomial over a simplex.

    `alpha` are the exponents of the dim + 1 barycentric coordinates.
    The mean equals dim! * prod(alpha_i!) / (|alpha| + dim)!.
    """
    from math import factorial

    total = sum(alpha)
    num = factorial(dim)
    for a in alpha:
        num *= factorial(a)
    return num / factorial(total + dim)
