"""Classical dynamic von Karman plate assembly, coded independently of ``solver2d``.

The plate occupies ``(0, L1) x (0, L2)`` with a uniform ``n1 x n2`` grid.  The
out-of-plane deflection ``w`` uses bicubic Hermite elements with node
unknowns ``(w, w_x, w_y, w_xy)`` (index ``node * 4 + kind``); in-plane
displacements use bilinear elements (index ``node * 2 + comp``).  Plate
operators::

    mass        int w w~
    bending     (1/12) int L2(D^2 w) : D^2 w~
    membrane    int L2(sym grad u) : sym grad u~
    target      C(w) = -(sqrt(kappa)/2) grad w (x) grad w

Used as a cross-check of the general shell assembly when the surface is flat.
"""

import numpy as np

from .errors import InputError


def _hermite_1d(x, length):
    """Cubic Hermite shape functions on ``[0, length]`` at local coordinates ``x``.

    Order: value at 0, slope at 0, value at length, slope at length.
    Returns values, first and second derivatives, each (P, 4).
    """
    r = x / length
    H = np.stack([1 - 3 * r**2 + 2 * r**3, length * (r - 2 * r**2 + r**3),
                  3 * r**2 - 2 * r**3, length * (r**3 - r**2)], axis=1)
    dH = np.stack([(-6 * r + 6 * r**2) / length, 1 - 4 * r + 3 * r**2,
                   (6 * r - 6 * r**2) / length, 3 * r**2 - 2 * r], axis=1)
    ddH = np.stack([(-6 + 12 * r) / length**2, (-4 + 6 * r) / length,
                    (6 - 12 * r) / length**2, (6 * r - 2) / length], axis=1)
    return H, dH, ddH


class PlateAssembly:
    """Dense classical plate matrices on a uniform grid."""

    def __init__(self, n1, n2, mu, lam, lengths=(1.0, 1.0), npts=4):
        if min(n1, n2) < 1:
            raise InputError("need at least one cell per direction")
        self.n1, self.n2 = n1, n2
        self.m1, self.m2 = n1 + 1, n2 + 1
        self.hx, self.hy = lengths[0] / n1, lengths[1] / n2
        self.mu, self.lam = mu, lam
        self.nw = 4 * self.m1 * self.m2
        self.nu = 2 * self.m1 * self.m2
        g, gw = np.polynomial.legendre.leggauss(npts)
        x1 = 0.5 * (g + 1) * self.hx
        x2 = 0.5 * (g + 1) * self.hy
        X1, X2 = np.meshgrid(x1, x2, indexing="ij")
        self.local = np.stack([X1.ravel(), X2.ravel()], axis=1)
        self.qw = np.outer(gw, gw).ravel() * self.hx * self.hy / 4
        self.cells = [(i, j) for i in range(n1) for j in range(n2)]
        self._w_basis()
        self._u_basis()

    def _w_basis(self):
        H1, d1, dd1 = _hermite_1d(self.local[:, 0], self.hx)
        H2, d2, dd2 = _hermite_1d(self.local[:, 1], self.hy)
        phi, grad, hess, idx = [], [], [], []
        for ca in (0, 1):
            for cb in (0, 1):
                for kind in range(4):
                    a, b = 2 * ca + kind % 2, 2 * cb + kind // 2
                    phi.append(H1[:, a] * H2[:, b])
                    grad.append(np.stack([d1[:, a] * H2[:, b], H1[:, a] * d2[:, b]], axis=1))
                    hess.append(np.stack([dd1[:, a] * H2[:, b], d1[:, a] * d2[:, b],
                                          d1[:, a] * d2[:, b], H1[:, a] * dd2[:, b]], axis=1))
                    idx.append((ca, cb, kind))
        self.w_phi = np.stack(phi, axis=1)            # (Q, 16)
        self.w_grad = np.stack(grad, axis=1)          # (Q, 16, 2)
        self.w_hess = np.stack(hess, axis=1)          # (Q, 16, 4) row-major 2x2
        self.w_local = idx

    def _u_basis(self):
        r = self.local[:, 0] / self.hx
        s = self.local[:, 1] / self.hy
        grads = []
        self.u_corners = [(0, 0), (0, 1), (1, 0), (1, 1)]
        for ca, cb in self.u_corners:
            fr, dr = (r, 1 / self.hx) if ca else (1 - r, -1 / self.hx)
            fs, ds = (s, 1 / self.hy) if cb else (1 - s, -1 / self.hy)
            grads.append(np.stack([dr * fs, fr * ds], axis=1))
        self.u_grad = np.stack(grads, axis=1)         # (Q, 4, 2)

    def w_dofs(self, i, j):
        return np.array([((i + ca) * self.m2 + j + cb) * 4 + k for ca, cb, k in self.w_local])

    def u_nodes(self, i, j):
        return np.array([(i + ca) * self.m2 + j + cb for ca, cb in self.u_corners])

    def l2(self, G):
        """``L2`` applied to 2x2 matrices (..., 2, 2)."""
        S = 0.5 * (G + np.swapaxes(G, -1, -2))
        tr = S[..., 0, 0] + S[..., 1, 1]
        coef = 2 * self.mu * self.lam / (2 * self.mu + self.lam)
        return 2 * self.mu * S + coef * tr[..., None, None] * np.eye(2)

    # -- matrices -------------------------------------------------------------------------

    def mass(self):
        M = np.zeros((self.nw, self.nw))
        loc = np.einsum("q,qa,qb->ab", self.qw, self.w_phi, self.w_phi)
        for i, j in self.cells:
            d = self.w_dofs(i, j)
            M[np.ix_(d, d)] += loc
        return M

    def bending(self):
        K = np.zeros((self.nw, self.nw))
        Hs = self.w_hess.reshape(-1, 16, 2, 2)
        LH = self.l2(Hs)
        loc = np.einsum("q,qaij,qbij->ab", self.qw, LH, Hs) / 12.0
        for i, j in self.cells:
            d = self.w_dofs(i, j)
            K[np.ix_(d, d)] += loc
        return K

    def inplane_penalty(self):
        """``int sym grad v : sym grad v~`` for in-plane Hermite fields ``v`` (index scalar * 2 + comp)."""
        P = np.zeros((2 * self.nw, 2 * self.nw))
        # strain of v = phi_a e_c : sym(e_c (x) grad phi_a)
        E = np.zeros((len(self.qw), 16, 2, 2, 2))
        for c in range(2):
            E[:, :, c, c, :] = self.w_grad
        E = 0.5 * (E + np.swapaxes(E, -1, -2))
        loc = np.einsum("q,qaij,qbij->ab", self.qw, E.reshape(-1, 32, 2, 2), E.reshape(-1, 32, 2, 2))
        for i, j in self.cells:
            d = (2 * self.w_dofs(i, j)[:, None] + np.arange(2)).ravel()
            P[np.ix_(d, d)] += loc
        return P

    def _u_strain(self):
        E = np.zeros((len(self.qw), 4, 2, 2, 2))
        for c in range(2):
            E[:, :, c, c, :] = self.u_grad
        E = 0.5 * (E + np.swapaxes(E, -1, -2))
        return E.reshape(-1, 8, 2, 2)

    def membrane(self):
        K = np.zeros((self.nu, self.nu))
        E = self._u_strain()
        loc = np.einsum("q,qaij,qbij->ab", self.qw, self.l2(E), E)
        for i, j in self.cells:
            d = (2 * self.u_nodes(i, j)[:, None] + np.arange(2)).ravel()
            K[np.ix_(d, d)] += loc
        return K

    # -- coupling ------------------------------------------------------------------------

    def grad_w(self, w):
        """``grad w`` at all quadrature points, (E * Q, 2), cell-major."""
        return np.concatenate([np.einsum("qai,a->qi", self.w_grad, w[self.w_dofs(i, j)])
                               for i, j in self.cells])

    def target(self, w, kappa):
        g = self.grad_w(w)
        return -0.5 * np.sqrt(kappa) * np.einsum("pi,pj->pij", g, g)

    def coupling_matrix(self, w, kappa):
        """``dC/dw`` as a dense (E * Q * 4, nw) matrix, rows point-major then 2x2 row-major."""
        g = self.grad_w(w).reshape(len(self.cells), -1, 2)
        Q = len(self.qw)
        J = np.zeros((len(self.cells) * Q * 4, self.nw))
        s = -0.5 * np.sqrt(kappa)
        for e, (i, j) in enumerate(self.cells):
            d = self.w_dofs(i, j)
            blk = s * (np.einsum("qi,qaj->qija", g[e], self.w_grad)
                       + np.einsum("qai,qj->qija", self.w_grad, g[e]))
            J[e * Q * 4:(e + 1) * Q * 4][:, d] = blk.reshape(Q * 4, 16)
        return J

    def membrane_rhs(self, w, kappa):
        """``int L2(C(w)) : sym grad u~`` for bilinear ``u~``."""
        LC = self.l2(self.target(w, kappa)).reshape(len(self.cells), -1, 2, 2)
        E = self._u_strain()
        r = np.zeros(self.nu)
        for e, (i, j) in enumerate(self.cells):
            d = (2 * self.u_nodes(i, j)[:, None] + np.arange(2)).ravel()
            r[d] += np.einsum("q,qij,qaij->a", self.qw, LC[e], E)
        return r

    def interior_u(self):
        mask = np.zeros((self.m1, self.m2), bool)
        mask[1:-1, 1:-1] = True
        return np.flatnonzero(np.repeat(mask.ravel(), 2))

    def solve_membrane(self, w, kappa):
        """Clamped in-plane displacement whose strain is the projection of ``C(w)``."""
        free = self.interior_u()
        u = np.zeros(self.nu)
        K = self.membrane()
        u[free] = np.linalg.solve(K[np.ix_(free, free)], self.membrane_rhs(w, kappa)[free])
        return u

    def strain_u(self, u):
        E = self._u_strain()
        return np.concatenate([np.einsum("qaij,a->qij", E, u[(2 * self.u_nodes(i, j)[:, None]
                                                               + np.arange(2)).ravel()])
                               for i, j in self.cells])

    def membrane_force(self, w, kappa):
        """``dC/dw^T W L2(C - B)`` with ``B`` the projected membrane strain."""
        C = self.target(w, kappa)
        B = self.strain_u(self.solve_membrane(w, kappa))
        wq = np.tile(self.qw, len(self.cells))
        R = (wq[:, None, None] * self.l2(C - B)).reshape(-1)
        return self.coupling_matrix(w, kappa).T @ R


def _rel(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-300)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def compare(problem, w, kappa=None):
    """Largest entrywise discrepancies (relative to the largest entry) between a flat
    ``solver2d.LimitProblem`` and the classical assembly.

    ``w`` holds Hermite coefficients of the deflection (node * 4 + kind).
    """
    space = problem.space
    (a1, b1), (a2, b2) = space.chart.bounds
    if space.chart.kind != "plate":
        raise InputError("plate comparison requires a flat chart")
    kappa = problem.kappa if kappa is None else kappa
    pa = PlateAssembly(space.n1, space.n2, problem.material.mu, problem.material.lam,
                       (b1 - a1, b2 - a2), space.npts)
    nw = pa.nw
    c = lambda comp: np.arange(nw) * 3 + comp
    inp = (np.arange(nw)[:, None] * 3 + np.arange(2)).ravel()
    M = problem.mass_full.toarray()
    Kb = problem.bending_full.toarray()
    P = problem.penalty_full.toarray()
    Km = problem.membrane_full
    um_inp = (np.arange(pa.m1 * pa.m2)[:, None] * 3 + np.arange(2)).ravel()
    q = np.zeros(3 * nw)
    q[c(2)] = w
    out = {
        "mass": max(_rel(M[np.ix_(c(k), c(k))], pa.mass()) for k in range(3)),
        "bending": _rel(Kb[np.ix_(c(2), c(2))], pa.bending()),
        "bending_inplane": float(np.abs(Kb[np.ix_(inp, inp)]).max() / np.abs(Kb).max()),
        "penalty": _rel(P[np.ix_(inp, inp)], pa.inplane_penalty()),
        "membrane": _rel(Km[np.ix_(um_inp, um_inp)], pa.membrane()),
    }
    if kappa > 0:
        A = (space.A_op @ q).reshape(-1, 3, 3)
        J = problem.strain_jacobian(A).toarray()
        out["coupling_matrix"] = _rel(J[:, c(2)], pa.coupling_matrix(w, kappa))
        G = space.membrane_op
        rhs = G.T @ (problem.WL @ problem.target_strain(A))
        out["membrane_rhs"] = _rel(rhs[um_inp], pa.membrane_rhs(w, kappa))
        out["membrane_force"] = _rel(problem.membrane_force(q)[c(2)], pa.membrane_force(w, kappa))
    return out
