"""Quadrature rules on the reference triangle and the reference interval."""
import numpy as np


def triangle_rule(n: int = 5):
    """Collapsed Gauss rule on the triangle (0,0), (1,0), (0,1).

    Uses an ``n`` x ``n`` Gauss-Legendre product mapped through the Duffy
    transform; exact for polynomials of total degree ``2n - 2``.  Returns
    points of shape (n*n, 2) and weights summing to 1/2.
    """
    xi, w = np.polynomial.legendre.leggauss(n)
    s = 0.5 * (xi + 1.0)
    ws = 0.5 * w
    S, T = np.meshgrid(s, s, indexing="ij")
    WS, WT = np.meshgrid(ws, ws, indexing="ij")
    x = S * (1.0 - T)
    y = T
    weights = WS * WT * (1.0 - T)
    return np.column_stack([x.ravel(), y.ravel()]), weights.ravel()


def interval_rule(n: int = 3):
    """Gauss-Legendre rule on [0, 1]."""
    xi, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (xi + 1.0), 0.5 * w
