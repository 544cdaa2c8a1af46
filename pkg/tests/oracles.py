"""Independent reference computations used by the tests."""

import numpy as np

from shellvk.material import energy_density

SLOTS = ((0, 2), (1, 2), (2, 0), (2, 1), (2, 2))


def fd_hessian_q3(m, F, eps=1e-4):
    """``D^2 W(Id)(F, F)`` by a central second difference of ``W`` along ``F``."""
    F = np.asarray(F, dtype=float)
    I = np.eye(3)
    return (energy_density(m, I + eps * F) - 2 * energy_density(m, I)
            + energy_density(m, I - eps * F)) / eps ** 2


def fd_stress(m, F, eps=1e-6):
    out = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            d = np.zeros((3, 3))
            d[i, j] = eps
            out[i, j] = (energy_density(m, F + d) - energy_density(m, F - d)) / (2 * eps)
    return out


def _q3_direct(m, F):
    S = 0.5 * (F + np.swapaxes(F, -1, -2))
    return 2 * m.mu * np.sum(S * S, axis=(-2, -1)) + m.lam * np.trace(S, axis1=-2, axis2=-1) ** 2


def brute_force_q2(m, G, width=3.0, n=13):
    """Minimize ``Q3`` over the normal entries: coarse grid, then Newton polish.

    Only the symmetric normal components matter, so the search is over
    ``(F13 = F31, F23 = F32, F33)``. The Newton step uses central finite
    differences, which are exact for a quadratic up to round-off.
    """
    G = np.asarray(G, dtype=float)
    F0 = np.zeros((3, 3))
    F0[:2, :2] = G
    dirs = np.zeros((3, 3, 3))
    for k, (a, b) in enumerate(((0, 2), (1, 2), (2, 2))):
        dirs[k, a, b] = dirs[k, b, a] = 1.0

    def f(z):
        return _q3_direct(m, F0 + np.tensordot(z, dirs, axes=(-1, 0)))

    scale = max(1.0, np.abs(G).max())
    axis = np.linspace(-width * scale, width * scale, n)
    grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), -1).reshape(-1, 3)
    z = grid[np.argmin(f(grid))]
    eps = scale
    for _ in range(3):
        g = np.zeros(3)
        H = np.zeros((3, 3))
        E = np.eye(3) * eps
        for a in range(3):
            g[a] = (f(z + E[a]) - f(z - E[a])) / (2 * eps)
            for b in range(3):
                H[a, b] = (f(z + E[a] + E[b]) - f(z + E[a] - E[b])
                           - f(z - E[a] + E[b]) + f(z - E[a] - E[b])) / (4 * eps ** 2)
        z = z - np.linalg.solve(H, g)
    return f(z)
