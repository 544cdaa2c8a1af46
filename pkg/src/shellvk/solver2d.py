"""Limit dynamic von Karman shell system for the pair (V, B_tan).

``V`` is a C^1 field of ambient 3-vectors discretized with tensor-product
cubic Hermite elements on the chart grid; the infinitesimal-isometry
constraint ``sym(grad V)_tan = 0`` is imposed by a quadratic penalty.  The
membrane strain ``B`` lives in the space of symmetrized tangential gradients
of bilinear R^3-valued fields ``u_m`` and is obtained, at every
configuration, by the L2-weighted projection

    int L2(B - C) : B~ = 0,   C = (sqrt(kappa)/2) (A^2)_tan.

Equation of motion (strong in time):

    M V'' + (K_bend + P / eps_iso) V + g_m(V) = F(t),

with ``g_m`` the derivative of the membrane energy ``1/2 int Q2(B - C)``.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .basis import gauss, hermite
from .errors import DiscretizationError, InputError, SolverError
from .fields import NormalProfile
from .geometry import chart_quadrature
from .material import QuadraticForms

MIDPOINT = "midpoint"
AVF = "avf"
_AVF_THETA = (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0))

# local Hermite function (corner (ca, cb), kind k) -> 1D indices
_KINDS = [(ca, cb, k) for ca in (0, 1) for cb in (0, 1) for k in range(4)]


def kinematics(n, dual, ddual, dn, Pi, T, dV, ddV):
    """Pointwise kinematic quantities of a field ``V`` from its chart derivatives.

    Arrays broadcast over leading axes.  ``dV[..., c, i] = d_i V_c`` and
    ``ddV[..., c, i, j] = d_i d_j V_c``.

    Returns a dict with ``gradV`` (ambient 3x3), ``An``, ``A`` (gradient
    completed by ``An (x) n``), ``K = (grad(An) - A Pi)_tan`` and
    ``S = sym(grad V)_tan``, tangential blocks in the orthonormal frame ``T``.
    """
    gradV = np.einsum("...ci,...mi->...cm", dV, dual)
    An = -np.einsum("...ci,...c,...mi->...m", dV, n, dual)
    A = gradV + An[..., :, None] * n[..., None, :]
    dAn = -(np.einsum("...cij,...c,...mi->...mj", ddV, n, dual)
            + np.einsum("...ci,...cj,...mi->...mj", dV, dn, dual)
            + np.einsum("...ci,...c,...mij->...mj", dV, n, ddual))
    gradAn = np.einsum("...mj,...kj->...mk", dAn, dual)
    Kfull = gradAn - A @ Pi
    K = np.einsum("...ma,...mk,...kb->...ab", T, Kfull, T)
    G = np.einsum("...ma,...mk,...kb->...ab", T, gradV, T)
    S = 0.5 * (G + np.swapaxes(G, -1, -2))
    return {"gradV": gradV, "An": An, "A": A, "K": K, "S": S}


class HermiteSpace:
    """C^1 bicubic Hermite space on the uniform ``n1 x n2`` grid of a chart.

    Scalar DOFs per node are ``(f, d1 f, d2 f, d1 d2 f)`` with respect to chart
    parameters; node ``(i, j)`` has index ``i * (n2 + 1) + j``.  Vector
    coefficient arrays have shape (n_nodes * 4, 3).
    """

    def __init__(self, chart, n1, n2, npts=4):
        if min(n1, n2) < 1:
            raise ValueError("need at least one cell per direction")
        self.chart = chart
        self.n1, self.n2, self.npts = n1, n2, npts
        (a1, b1), (a2, b2) = chart.bounds
        self.m1, self.m2 = n1 + 1, n2 + 1
        self.xi1 = np.linspace(a1, b1, self.m1)
        self.xi2 = np.linspace(a2, b2, self.m2)
        self.hx, self.hy = (b1 - a1) / n1, (b2 - a2) / n2
        self.n_nodes = self.m1 * self.m2
        self.n_scalar = 4 * self.n_nodes
        self.ndof = 3 * self.n_scalar
        pts, W = chart_quadrature(chart, n1, n2, npts)
        self.qp = pts
        self.E, self.Q = pts.shape[:2]
        self.geo = chart.geometry(pts.reshape(-1, 2))
        self.w = (self.geo.area_element.reshape(self.E, self.Q) * W[None, :]).ravel()
        t, _ = gauss(npts)
        tt = np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1).reshape(-1, 2)
        self.phi, self.dphi, self.ddphi = self._reference_basis(tt)
        ii, jj = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
        ii, jj = ii.ravel(), jj.ravel()
        self.cells = np.stack([((ii + ca) * self.m2 + jj + cb) * 4 + k for ca, cb, k in _KINDS], axis=1)
        self.edofs = (3 * self.cells[:, :, None] + np.arange(3)).reshape(self.E, 48)

    def _reference_basis(self, tt):
        H1, d1, dd1 = hermite(tt[:, 0], self.hx)
        H2, d2, dd2 = hermite(tt[:, 1], self.hy)
        phi, dphi, ddphi = [], [], []
        for ca, cb, k in _KINDS:
            a, b = 2 * ca + (k & 1), 2 * cb + (k >> 1)
            phi.append(H1[:, a] * H2[:, b])
            dphi.append(np.stack([d1[:, a] * H2[:, b], H1[:, a] * d2[:, b]], axis=1))
            ddphi.append(np.stack([np.stack([dd1[:, a] * H2[:, b], d1[:, a] * d2[:, b]], axis=1),
                                   np.stack([d1[:, a] * d2[:, b], H1[:, a] * dd2[:, b]], axis=1)], axis=1))
        return np.stack(phi, 1), np.stack(dphi, 1), np.stack(ddphi, 1)

    @cached_property
    def node_xi(self):
        A, B = np.meshgrid(self.xi1, self.xi2, indexing="ij")
        return np.stack([A.ravel(), B.ravel()], axis=1)

    def locate(self, xi):
        """Cell index and reference coordinates in [-1, 1]^2 of chart points."""
        xi = self.chart.check(np.atleast_2d(xi))
        (a1, _), (a2, _) = self.chart.bounds
        i = np.clip(np.floor((xi[:, 0] - a1) / self.hx).astype(int), 0, self.n1 - 1)
        j = np.clip(np.floor((xi[:, 1] - a2) / self.hy).astype(int), 0, self.n2 - 1)
        t1 = 2 * (xi[:, 0] - (a1 + i * self.hx)) / self.hx - 1
        t2 = 2 * (xi[:, 1] - (a2 + j * self.hy)) / self.hy - 1
        return i * self.n2 + j, np.stack([t1, t2], axis=1)

    def evaluate(self, coeffs, xi):
        """Values, first and second chart derivatives of a vector field at points."""
        cell, tt = self.locate(xi)
        phi, dphi, ddphi = self._reference_basis(tt)
        c = np.asarray(coeffs).reshape(self.n_scalar, 3)[self.cells[cell]]  # (P, 16, 3)
        return (np.einsum("pa,pac->pc", phi, c), np.einsum("pai,pac->pci", dphi, c),
                np.einsum("paij,pac->pcij", ddphi, c))

    def kinematics_at(self, coeffs, xi):
        geo = self.chart.geometry(np.atleast_2d(xi))
        V, dV, ddV = self.evaluate(coeffs, xi)
        out = kinematics(geo.n, geo.dual, geo.ddual, geo.dn, geo.Pi, geo.frame, dV, ddV)
        out["V"] = V
        return out

    # -- local operators at quadrature points -----------------------------------

    def _geo_local(self):
        g = self.geo
        E, Q = self.E, self.Q
        r = lambda a: a.reshape((E, Q, 1, 1) + a.shape[1:])
        return r(g.n), r(g.dual), r(g.ddual), r(g.dn), r(g.Pi), r(g.frame)

    @cached_property
    def local_kinematics(self):
        """Kinematics of every local basis field (a, c), arrays (E, Q, 16, 3, ...)."""
        eye = np.eye(3)
        dV = eye[None, None, None, :, :, None] * self.dphi[None, :, :, None, None, :]
        ddV = eye[None, None, None, :, :, None, None] * self.ddphi[None, :, :, None, None, :, :]
        return kinematics(*self._geo_local(), dV, ddV)

    def _qp_operator(self, local, width):
        """Sparse map from vector DOFs to stacked per-point quantities."""
        E, Q = self.E, self.Q
        vals = local.reshape(E, Q, 48, width).transpose(0, 1, 3, 2)  # (E, Q, width, 48)
        rows = np.broadcast_to((np.arange(E * Q).reshape(E, Q)[:, :, None, None] * width
                                + np.arange(width)[None, None, :, None]), vals.shape)
        cols = np.broadcast_to(self.edofs[:, None, None, :], vals.shape)
        return sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(E * Q * width, self.ndof))

    @cached_property
    def value_op(self):
        E, Q = self.E, self.Q
        loc = self.phi[None, :, :, None, None] * np.eye(3)[None, None, None]  # (1, Q, 16, c, comp)
        return self._qp_operator(np.broadcast_to(loc, (E, Q, 16, 3, 3)), 3)

    @cached_property
    def A_op(self):
        return self._qp_operator(self.local_kinematics["A"], 9)

    @cached_property
    def K_op(self):
        return self._qp_operator(self.local_kinematics["K"], 4)

    @cached_property
    def S_op(self):
        return self._qp_operator(self.local_kinematics["S"], 4)

    # -- membrane space ---------------------------------------------------------

    @cached_property
    def membrane_op(self):
        """Sparse map from bilinear R^3 DOFs (node * 3 + c) to sym(grad u)_tan at points."""
        t, _ = gauss(self.npts)
        tt = np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1).reshape(-1, 2)
        u, v = 0.5 * (tt[:, 0] + 1), 0.5 * (tt[:, 1] + 1)
        corners = [(0, 0), (0, 1), (1, 0), (1, 1)]
        dN = np.stack([np.stack([(2 * ca - 1) * (v if cb else 1 - v) / self.hx,
                                 (u if ca else 1 - u) * (2 * cb - 1) / self.hy], axis=1)
                       for ca, cb in corners], axis=1)  # (Q, 4, 2)
        g = self.geo
        E, Q = self.E, self.Q
        dual = g.dual.reshape(E, Q, 3, 2)
        T = g.frame.reshape(E, Q, 3, 2)
        grad = np.einsum("qbi,eqmi->eqbm", dN, dual)  # surface gradient of the scalar basis
        Tg = np.einsum("eqmd,eqbm->eqbd", T, grad)
        # strain of u = N_b e_c: sym(T^T (e_c (x) grad N_b) T)
        loc = np.einsum("eqca,eqbd->eqbcad", T, Tg)
        loc = 0.5 * (loc + np.swapaxes(loc, -1, -2))  # (E, Q, 4, 3, 2, 2)
        ii, jj = np.meshgrid(np.arange(self.n1), np.arange(self.n2), indexing="ij")
        nodes = np.stack([(ii.ravel() + ca) * self.m2 + jj.ravel() + cb for ca, cb in corners], axis=1)
        dofs = (3 * nodes[:, :, None] + np.arange(3)).reshape(E, 12)
        vals = loc.reshape(E, Q, 12, 4).transpose(0, 1, 3, 2)
        rows = np.broadcast_to(np.arange(E * Q).reshape(E, Q)[:, :, None, None] * 4
                               + np.arange(4)[None, None, :, None], vals.shape)
        cols = np.broadcast_to(dofs[:, None, None, :], vals.shape)
        return sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(E * Q * 4, 3 * self.n_nodes))

    # -- clamped boundary -------------------------------------------------------

    @cached_property
    def clamp_basis(self):
        """Orthonormal null-space basis ``Z`` of the clamped boundary conditions.

        On an edge ``xi_1 = const`` the conditions are ``V = 0`` (values and
        the derivative along the edge) and ``<d_1 V, n> = 0`` together with its
        derivative along the edge, imposed at the nodes; symmetrically on
        ``xi_2 = const``.
        """
        geo = self.chart.geometry(self.node_xi)
        blocks = []
        for node in range(self.n_nodes):
            i, j = divmod(node, self.m2)
            rows = []
            n, dn = geo.n[node], geo.dn[node]

            def row(entries):
                r = np.zeros(12)
                for kind, vec in entries:
                    r[3 * kind:3 * kind + 3] += vec
                return r

            eye = np.eye(3)
            if i in (0, self.m1 - 1):
                rows += [row([(0, e)]) for e in eye] + [row([(2, e)]) for e in eye]
                rows += [row([(1, n)]), row([(1, dn[:, 1]), (3, n)])]
            if j in (0, self.m2 - 1):
                rows += [row([(0, e)]) for e in eye] + [row([(1, e)]) for e in eye]
                rows += [row([(2, n)]), row([(2, dn[:, 0]), (3, n)])]
            if rows:
                _, sv, Vt = np.linalg.svd(np.array(rows))
                rank = int(np.sum(sv > 1e-12 * sv[0]))
                blocks.append(Vt[rank:].T)
            else:
                blocks.append(np.eye(12))
        return sp.block_diag(blocks, format="csr")


@dataclass(frozen=True, eq=False)
class IsometryField:
    """Hermite coefficients (n_scalar, 3) of a penalized infinitesimal isometry."""

    space: HermiteSpace
    coeffs: np.ndarray
    eps_iso: float = 1e-6

    def kinematics(self):
        return self.space.kinematics_at(self.coeffs, self.space.qp.reshape(-1, 2))

    def skew(self):
        return (self.space.A_op @ self.coeffs.ravel()).reshape(-1, 3, 3)

    def constraint_residual(self):
        """``||sym(grad V)_tan||_{L^2}``."""
        S = self.space.S_op @ self.coeffs.ravel()
        return float(np.sqrt(np.sum(np.repeat(self.space.w, 4) * S * S)))


@dataclass(frozen=True, eq=False)
class MembraneStrain:
    """Membrane strain ``B = sym(grad u_m)_tan`` at quadrature points (EQ, 2, 2)."""

    um: np.ndarray
    B: np.ndarray


class LimitProblem:
    """Assembled operators of the limit system on one Hermite space.

    Parameters
    ----------
    space : HermiteSpace
    material : MaterialModel
    kappa : float
        Limit constant ``e_h / h^4``; 0 drops the membrane coupling.
    eps_iso : float
        Penalty parameter of the isometry constraint.
    membrane_clamped : bool
        Restrict the membrane displacements ``u_m`` to fields vanishing on the
        boundary, as the clamped three-dimensional problem does.
    """

    def __init__(self, space, material, kappa, eps_iso=1e-6, newton_tol=1e-10, newton_maxit=50,
                 membrane_clamped=True):
        if kappa < 0:
            raise ValueError("kappa must be non-negative")
        if not eps_iso > 0:
            raise ValueError("eps_iso must be positive")
        self.space = space
        self.material = material
        self.kappa = float(kappa)
        self.eps_iso = float(eps_iso)
        self.newton_tol = newton_tol
        self.newton_maxit = newton_maxit
        self.membrane_clamped = bool(membrane_clamped)
        self.L2 = QuadraticForms(material).l2_matrix()
        self._lu = None
        self._lu_dt = None

    # -- weights ------------------------------------------------------------------

    @cached_property
    def WL(self):
        return sp.kron(sp.diags(self.space.w), sp.csr_matrix(self.L2), format="csr")

    @cached_property
    def W3(self):
        return sp.diags(np.repeat(self.space.w, 3))

    @cached_property
    def W4(self):
        return sp.diags(np.repeat(self.space.w, 4))

    @property
    def Z(self):
        return self.space.clamp_basis

    def reduce(self, K):
        return (self.Z.T @ K @ self.Z).tocsc()

    # -- full-space matrices --------------------------------------------------------

    @cached_property
    def mass_full(self):
        P = self.space.value_op
        return (P.T @ self.W3 @ P).tocsr()

    @cached_property
    def bending_full(self):
        K = self.space.K_op
        return (K.T @ self.WL @ K / 12.0).tocsr()

    @cached_property
    def penalty_full(self):
        S = self.space.S_op
        return (S.T @ self.W4 @ S).tocsr()

    @cached_property
    def membrane_full(self):
        G = self.space.membrane_op
        return (G.T @ self.WL @ G).toarray()

    @cached_property
    def membrane_free(self):
        """Membrane DOFs (node * 3 + c) that are not pinned by the boundary."""
        sp_ = self.space
        mask = np.ones((sp_.m1, sp_.m2), bool)
        if self.membrane_clamped:
            mask[0], mask[-1], mask[:, 0], mask[:, -1] = False, False, False, False
        return np.flatnonzero(np.repeat(mask.ravel(), 3))

    @cached_property
    def membrane_pinv(self):
        """Minimum-norm inverse of the membrane system (removes strain-free modes)."""
        free = self.membrane_free
        K = self.membrane_full[np.ix_(free, free)]
        pinv = np.zeros_like(self.membrane_full)
        pinv[np.ix_(free, free)] = np.linalg.pinv(K, rcond=1e-11, hermitian=True)
        if not np.all(np.isfinite(pinv)):
            raise DiscretizationError("membrane projection system is singular beyond repair")
        return pinv

    # -- reduced matrices -----------------------------------------------------------

    @cached_property
    def mass(self):
        return self.reduce(self.mass_full)

    @cached_property
    def linear_stiffness(self):
        return self.reduce(self.bending_full + self.penalty_full / self.eps_iso)

    def _factor(self, dt):
        c = 2.0 / dt**2
        self._lu = splu((c * self.mass + 0.5 * self.linear_stiffness).tocsc())
        self._lu_dt = dt

    # -- membrane ---------------------------------------------------------------------

    def target_strain(self, A):
        """``C = (sqrt(kappa)/2) (A^2)_tan`` flattened per point (EQ * 4,)."""
        T = self.space.geo.frame
        C = 0.5 * np.sqrt(self.kappa) * np.einsum("pma,pmk,pkl,plb->pab", T, A, A, T)
        return C.reshape(-1)

    def project(self, C, source=None):
        """Discrete projection ``B`` of ``C`` onto sym-gradients (with optional source stress)."""
        G = self.space.membrane_op
        rhs = G.T @ (self.WL @ C)
        if source is not None:
            rhs = rhs + G.T @ (self.W4 @ source)
        um = self.membrane_pinv @ rhs
        return um, G @ um

    def strain_jacobian(self, A):
        """Sparse ``dC/dq`` on full vector DOFs at configuration ``A`` (EQ, 3, 3)."""
        T = self.space.geo.frame
        s = 0.5 * np.sqrt(self.kappa)
        AtT = np.einsum("pmk,pma->pka", A, T)
        AT = np.einsum("plk,pkb->plb", A, T)
        # d C_ab / d dA_kl = s (AtT_ka T_lb + T_ka AT_lb)
        blk = s * (np.einsum("pka,plb->pabkl", AtT, T) + np.einsum("pka,plb->pabkl", T, AT))
        P = blk.shape[0]
        rows = np.broadcast_to(np.arange(P)[:, None, None] * 4 + np.arange(4)[None, :, None], (P, 4, 9))
        cols = np.broadcast_to(np.arange(P)[:, None, None] * 9 + np.arange(9)[None, None, :], (P, 4, 9))
        LA = sp.csr_matrix((blk.reshape(P, 4, 9).ravel(), (rows.ravel(), cols.ravel())), shape=(P * 4, P * 9))
        return LA @ self.space.A_op

    def membrane_state(self, q, source=None):
        """``(A, C, u_m, B)`` for full coefficients ``q``."""
        A = (self.space.A_op @ q).reshape(-1, 3, 3)
        C = self.target_strain(A)
        um, B = self.project(C, source)
        return A, C, um, B

    def membrane_force(self, q, source=None):
        """Full-space ``g_m = (dC/dq)^T W L2 (C - B)``; zero when kappa = 0."""
        if self.kappa == 0.0:
            return np.zeros(self.space.ndof)
        A, C, _, B = self.membrane_state(q, source)
        return self.strain_jacobian(A).T @ (self.WL @ (C - B))

    def membrane_energy(self, q):
        if self.kappa == 0.0:
            return 0.0
        _, C, _, B = self.membrane_state(q)
        d = C - B
        return 0.5 * float(d @ (self.WL @ d))

    def membrane_residual(self, C, B, source=None):
        """Largest ``|int L2(B - C) : B~_k| / ||B~_k||`` over membrane basis strains."""
        G = self.space.membrane_op
        r = G.T @ (self.WL @ (B - C))
        if source is not None:
            r = r - G.T @ (self.W4 @ source)
        norms = np.sqrt(np.asarray((G.multiply(G)).T @ np.repeat(self.space.w, 4)).ravel())
        r, norms = r[self.membrane_free], norms[self.membrane_free]
        live = norms > 1e-14 * max(norms.max(initial=0.0), 1e-300)
        return float(np.max(np.abs(r[live]) / norms[live], initial=0.0))

    # -- loads ---------------------------------------------------------------------------

    def load(self, forcing, t):
        """Reduced load vector ``Z^T int <f, phi>``."""
        if forcing is None:
            return np.zeros(self.Z.shape[1])
        if hasattr(forcing, "load_vector"):
            return self.Z.T @ forcing.load_vector(self, t)
        if not forcing.active:
            return np.zeros(self.Z.shape[1])
        f = forcing.values(t, self.space.geo, self.space.chart)
        return self.Z.T @ (self.space.value_op.T @ (self.W3 @ f.ravel()))


def _source(forcing, problem, t):
    if forcing is not None and hasattr(forcing, "source_stress"):
        return forcing.source_stress(problem, t)
    return None


@dataclass(frozen=True, eq=False)
class State2D:
    """Reduced coordinates of ``V`` and ``V_t`` with the projected membrane strain."""

    problem: LimitProblem
    r: np.ndarray
    rt: np.ndarray
    t: float
    membrane: MembraneStrain
    info: dict = field(default_factory=dict)

    @property
    def kappa(self):
        return self.problem.kappa

    @property
    def V(self):
        p = self.problem
        return IsometryField(p.space, (p.Z @ self.r).reshape(-1, 3), p.eps_iso)

    @property
    def Vt(self):
        p = self.problem
        return IsometryField(p.space, (p.Z @ self.rt).reshape(-1, 3), p.eps_iso)


def project_membrane(problem, A, kappa=None, source=None):
    """Membrane strain solving the stationarity condition for a given skew field ``A``.

    ``A`` holds 3x3 matrices at the quadrature points of ``problem.space``.
    ``kappa`` defaults to ``problem.kappa``.
    """
    A = np.asarray(A, float).reshape(-1, 3, 3)
    kappa = problem.kappa if kappa is None else kappa
    if kappa < 0:
        raise ValueError("kappa must be non-negative")
    T = problem.space.geo.frame
    C = (0.5 * np.sqrt(kappa) * np.einsum("pma,pmk,pkl,plb->pab", T, A, A, T)).reshape(-1)
    um, B = problem.project(C, source)
    return MembraneStrain(um, B.reshape(-1, 2, 2))


def bending_operator(problem, V, Vtilde):
    """``(1/12) int L2((grad(An) - A Pi)_tan) : (grad(A~n) - A~ Pi)_tan``."""
    q1 = _coeffs(V).ravel()
    q2 = _coeffs(Vtilde).ravel()
    return float(q1 @ (problem.bending_full @ q2))


def _coeffs(V):
    return V.coeffs if isinstance(V, IsometryField) else np.asarray(V, float)


def _make_state(problem, r, rt, t, forcing=None, info=None):
    q = problem.Z @ r
    src = _source(forcing, problem, t)
    if problem.kappa == 0.0 and src is None:
        B = np.zeros((problem.space.E * problem.space.Q, 2, 2))
        um = np.zeros(3 * problem.space.n_nodes)
        res = 0.0
    else:
        A, C, um, Bf = problem.membrane_state(q, src)
        B = Bf.reshape(-1, 2, 2)
        res = problem.membrane_residual(C, Bf, src)
    info = dict(info or {})
    info["membrane_residual"] = res
    return State2D(problem, r, rt, float(t), MembraneStrain(um, B), info)


def energy(state):
    """Limit energy split into kinetic, bending, membrane and penalty parts."""
    p = state.problem
    q = p.Z @ state.r
    kin = 0.5 * float(state.rt @ (p.mass @ state.rt))
    bend = 0.5 * float(q @ (p.bending_full @ q))
    pen = 0.5 * float(q @ (p.penalty_full @ q)) / p.eps_iso
    return {"kinetic": kin, "bending": bend, "membrane": p.membrane_energy(q), "penalty": pen}


def total_energy(state):
    return float(sum(energy(state).values()))


def _cross_derivative(field_, chart, xi, geo_at):
    """``d1 d2`` of a field from central differences of its first derivatives."""
    _, (a2, b2) = chart.bounds
    d = 1e-4 * (b2 - a2)
    # second-order stencils: central inside, one-sided three-point at the edges
    side = np.where(xi[:, 1] - d < a2, 1.0, np.where(xi[:, 1] + d > b2, -1.0, 0.0))

    def g(offset):
        pts = np.stack([xi[:, 0], xi[:, 1] + offset], 1)
        return field_.evaluate(geo_at(pts), chart)[1][:, :, 0]

    central = side == 0
    sgn = np.where(central, 1.0, side)[:, None]
    # offsets per point: central uses (+d, -d); one-sided uses (0, sgn d, 2 sgn d)
    g0 = g(np.zeros(len(xi)))
    g1 = g(np.where(central, d, side * d))
    g2 = g(np.where(central, -d, 2 * side * d))
    one_sided = sgn * (-3 * g0 + 4 * g1 - g2) / (2 * d)
    return np.where(central[:, None], (g1 - g2) / (2 * d), one_sided)


def interpolate(space, field_):
    """Hermite interpolant (full coefficients (n_scalar, 3)) of a chart field."""
    chart = space.chart
    xi = space.node_xi
    val, grad = field_.evaluate(chart.geometry(xi), chart)
    d12 = _cross_derivative(field_, chart, xi, chart.geometry)
    q = np.stack([val, grad[:, :, 0], grad[:, :, 1], d12], axis=1)
    return q.reshape(-1, 3)


def penalized_projection(problem, field_):
    """Reduced coefficients minimizing ``||V - w||^2 + (1/eps) ||sym(grad V)_tan||^2``."""
    sp_ = problem.space
    vals = field_.evaluate(sp_.geo, sp_.chart)[0]
    rhs = problem.Z.T @ (sp_.value_op.T @ (problem.W3 @ vals.ravel()))
    lhs = problem.mass + problem.reduce(problem.penalty_full) / problem.eps_iso
    return splu(lhs.tocsc()).solve(rhs)


def _to_reduced(problem, data, mode):
    if data is None:
        return np.zeros(problem.Z.shape[1])
    if isinstance(data, np.ndarray):
        q = data.ravel()
    elif mode == "project":
        return penalized_projection(problem, data)
    else:
        q = interpolate(problem.space, data).ravel()
    r = problem.Z.T @ q
    err = np.linalg.norm(q - problem.Z @ r)
    if err > 1e-8 * max(1.0, np.linalg.norm(q)):
        raise InputError(f"initial field violates the clamped boundary conditions (defect {err:.3g})")
    return r


def init_limit(problem, wbar=None, what=None, mode="interpolate", forcing=None):
    """Limit state at t = 0 with ``V = wbar``, ``V_t = what`` and ``B`` projected.

    Fields are chart fields (``evaluate(geo, chart)``) or full coefficient
    arrays.  ``mode="interpolate"`` uses Hermite interpolation and rejects
    data violating the clamped conditions; ``mode="project"`` uses the
    penalized L2 projection, which produces an approximate isometry.
    """
    if mode not in ("interpolate", "project"):
        raise ValueError(f"unknown mode {mode!r}")
    r = _to_reduced(problem, wbar, mode)
    rt = _to_reduced(problem, what, mode)
    return _make_state(problem, r, rt, 0.0, forcing, {"constraint_residual": _constraint(problem, r)})


def _constraint(problem, r):
    q = problem.Z @ r
    return float(np.sqrt(max(q @ (problem.penalty_full @ q), 0.0)))


def step_vk(state, dt, forcing=None, scheme=AVF, tol_B=1e-9):
    """Advance the limit system by ``dt``.

    The force is evaluated at the midpoint (``scheme="midpoint"``) or
    averaged along the step by two-point Gauss quadrature (``scheme="avf"``,
    exact energy balance for the quartic membrane energy).  The linear part
    is identical for both schemes.  Newton iterations reuse the factorized
    linear part, which dominates the Jacobian.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if scheme not in (MIDPOINT, AVF):
        raise ValueError(f"unknown scheme {scheme!r}")
    p = state.problem
    c = 2.0 / dt**2
    M, L, Z = p.mass, p.linear_stiffness, p.Z
    tm = state.t + 0.5 * dt
    F = p.load(forcing, tm)
    src = _source(forcing, p, tm)
    r0, v0 = state.r, state.rt
    cMv = c * dt * (M @ v0)

    def g(D):
        lin = L @ (r0 + 0.5 * D)
        if p.kappa == 0.0 and src is None:
            return lin
        if scheme == MIDPOINT:
            return lin + Z.T @ p.membrane_force(Z @ (r0 + 0.5 * D), src)
        return lin + 0.5 * sum(Z.T @ p.membrane_force(Z @ (r0 + th * D), src) for th in _AVF_THETA)

    if p._lu is None or p._lu_dt != dt:
        p._factor(dt)
    D = np.zeros_like(r0)
    R = c * (M @ D) - cMv + g(D) - F
    scale = max(np.linalg.norm(cMv), np.linalg.norm(g(D)), np.linalg.norm(F))
    its = 0
    if scale > 0:
        for its in range(1, p.newton_maxit + 1):
            D = D - p._lu.solve(R)
            R = c * (M @ D) - cMv + g(D) - F
            if np.linalg.norm(R) <= p.newton_tol * scale:
                break
        else:
            raise SolverError("limit-system Newton iteration did not converge",
                              {"t": state.t, "residual": float(np.linalg.norm(R) / scale)})
    r1 = r0 + D
    v1 = 2.0 * D / dt - v0
    new = _make_state(p, r1, v1, state.t + dt, forcing,
                      {"newton_iterations": its, "constraint_residual": _constraint(p, r1)})
    if new.info["membrane_residual"] > tol_B:
        raise SolverError("membrane stationarity residual above tol_B",
                          {"t": new.t, "residual": new.info["membrane_residual"]})
    return new


# -- manufactured plate solution ----------------------------------------------------------

def _bubble_1d(x, length):
    """``sin^2(pi x / L)`` with first and second derivatives."""
    k = np.pi / length
    return np.sin(k * x) ** 2, k * np.sin(2 * k * x), 2 * k**2 * np.cos(2 * k * x)


@dataclass(frozen=True)
class ManufacturedPlate:
    """Exact solution of the forced flat limit system with a membrane source.

    ``V = a cos(omega t) phi e3`` and ``u_m = b sin(omega t) (phi, phi, 0)`` with
    the clamped bubble ``phi = sin^2(pi x1/L1) sin^2(pi x2/L2)``.  The membrane
    source ``sigma = L2(B - C)`` and the load are chosen so that both fields
    solve the equations exactly; the load is supplied in Galerkin form.
    """

    amplitude: float = 1.0
    membrane_amplitude: float = 0.2
    omega: float = 2.0

    def _phi(self, chart, xi):
        (a1, b1), (a2, b2) = chart.bounds
        X, dX, ddX = _bubble_1d(xi[:, 0] - a1, b1 - a1)
        Y, dY, ddY = _bubble_1d(xi[:, 1] - a2, b2 - a2)
        grad = np.stack([dX * Y, X * dY], axis=1)
        hess = np.stack([np.stack([ddX * Y, dX * dY], 1), np.stack([dX * dY, X * ddY], 1)], 1)
        return X * Y, grad, hess

    def _check(self, problem):
        if problem.space.chart.kind != "plate" or problem.space.chart.orientation != 1:
            raise InputError("the manufactured solution is defined on the upward-oriented plate")

    def deflection(self, t):
        return self.amplitude * np.cos(self.omega * t)

    def exact_values(self, problem, t):
        """``V`` at the quadrature points (EQ, 3)."""
        phi, _, _ = self._phi(problem.space.chart, problem.space.geo.xi)
        out = np.zeros((len(phi), 3))
        out[:, 2] = self.deflection(t) * phi
        return out

    def initial_fields(self):
        """Chart fields of ``V(0)`` and ``V_t(0)``."""
        return (NormalProfile("bubble", self.deflection(0.0)),
                NormalProfile("bubble", -self.amplitude * self.omega * np.sin(0.0)))

    def _strains(self, problem, t):
        _, grad, _ = self._phi(problem.space.chart, problem.space.geo.xi)
        g = self.deflection(t) * grad
        C = -0.5 * np.sqrt(problem.kappa) * np.einsum("pi,pj->pij", g, g)
        Gu = self.membrane_amplitude * np.sin(self.omega * t) * grad
        B = 0.5 * (Gu[:, None, :] + Gu[:, :, None])  # sym grad of (phi, phi)
        return B, C

    def source_stress(self, problem, t):
        self._check(problem)
        B, C = self._strains(problem, t)
        return np.einsum("ij,pj->pi", problem.L2, (B - C).reshape(-1, 4)).ravel()

    def load_vector(self, problem, t):
        """Galerkin load ``int V_tt . phi + (1/12) int L2 K : K[phi] - int sigma : dC[phi]``."""
        self._check(problem)
        sp_ = problem.space
        phi, grad, hess = self._phi(sp_.chart, sp_.geo.xi)
        wtt = -self.omega**2 * self.deflection(t)
        acc = np.zeros((len(phi), 3))
        acc[:, 2] = wtt * phi
        f = sp_.value_op.T @ (problem.W3 @ acc.ravel())
        K = (-self.deflection(t) * hess).reshape(-1)  # grad(An) with An = -grad w
        f = f + sp_.K_op.T @ (problem.WL @ K) / 12.0
        if problem.kappa > 0:
            A = np.zeros((len(phi), 3, 3))
            gw = self.deflection(t) * grad
            A[:, 2, :2] = gw
            A[:, :2, 2] = -gw
            J = problem.strain_jacobian(A)
            f = f - J.T @ (problem.W4 @ self.source_stress(problem, t))
        return f

    def error(self, state):
        """``||V_h - V||_{L2}`` at the state time."""
        p = state.problem
        Vh = (p.space.value_op @ (p.Z @ state.r)).reshape(-1, 3)
        d = Vh - self.exact_values(p, state.t)
        return float(np.sqrt(np.sum(p.space.w[:, None] * d * d)))
