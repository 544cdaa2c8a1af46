"""One-dimensional shape functions and Gauss rules on the reference interval [-1, 1]."""

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def gauss(npts):
    """Gauss-Legendre points and weights on [-1, 1]."""
    x, w = np.polynomial.legendre.leggauss(npts)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def lagrange(order, t):
    """Equispaced Lagrange basis of degree ``order`` and its first derivative.

    Parameters
    ----------
    order : int
        Polynomial degree (>= 1).  Nodes are ``linspace(-1, 1, order + 1)``.
    t : array_like
        Evaluation points in [-1, 1].

    Returns
    -------
    N, dN : ndarray, shape (len(t), order + 1)
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    nodes = np.linspace(-1.0, 1.0, order + 1)
    npt = len(t)
    N = np.ones((npt, order + 1))
    dN = np.zeros((npt, order + 1))
    for a in range(order + 1):
        others = [b for b in range(order + 1) if b != a]
        denom = np.prod([nodes[a] - nodes[b] for b in others])
        for b in others:
            N[:, a] *= t - nodes[b]
        for c in others:
            term = np.ones(npt)
            for b in others:
                if b != c:
                    term *= t - nodes[b]
            dN[:, a] += term
        N[:, a] /= denom
        dN[:, a] /= denom
    return N, dN


def hermite(t, length):
    """Cubic Hermite basis on an interval of physical ``length``.

    Functions are ordered (value@left, slope@left, value@right, slope@right);
    the slope functions are scaled so that their coefficient is the physical
    derivative.  Returns values and first and second physical derivatives,
    each of shape (len(t), 4).
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    u = 0.5 * (t + 1.0)  # [0, 1]
    L = length
    H = np.stack([
        1 - 3 * u**2 + 2 * u**3,
        L * (u - 2 * u**2 + u**3),
        3 * u**2 - 2 * u**3,
        L * (-u**2 + u**3),
    ], axis=1)
    dH = np.stack([
        -6 * u + 6 * u**2,
        L * (1 - 4 * u + 3 * u**2),
        6 * u - 6 * u**2,
        L * (-2 * u + 3 * u**2),
    ], axis=1) / L
    d2H = np.stack([
        -6 + 12 * u,
        L * (-4 + 6 * u),
        6 - 12 * u,
        L * (-2 + 6 * u),
    ], axis=1) / L**2
    return H, dH, d2H
