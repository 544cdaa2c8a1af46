"""Rescaled three-dimensional elastodynamics of a thin shell on the fixed domain.

The deformation ``y`` of the physical shell of thickness ``h`` is carried on
the reference domain of thickness ``h0``.  Nodes sit at ``x + s n``; the
rescaled gradient is obtained isoparametrically from the interpolated rest
map ``x + (s h / h0) n``, whose parameter Jacobian ``J_h`` realises the chain
rule of the rescaling, so that the rest state has ``grad_h y = Id`` exactly.
Integrals use the thickness-averaged measure ``det(J_h) / h dxi ds``, i.e.
``det F(s h/h0) dx`` averaged over ``s``.

Unknowns are stored as displacements ``u = y - rest`` to keep the small
strains of the asymptotic regime free of cancellation.
"""

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import GeometryError, InputError, SolverError, StateError
from .material import dist_so3, energy_density_h, stress_h, tangent

KAPPA_H4 = "kappa_h4"
SUB_H4 = "sub_h4"

MIDPOINT = "midpoint"
AVF = "avf"

# Gauss points of the averaged-vector-field integral over the step
_AVF_THETA = (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0))

MAX_SO3_DISTANCE = 0.5


@dataclass(frozen=True)
class ScalingLaw:
    """Thickness ``h`` together with the energy scale ``e_h``.

    ``rule="kappa_h4"`` sets ``e_h = kappa h^4``; ``rule="sub_h4"`` sets
    ``e_h = h^beta`` with ``beta > 4`` (limit ``kappa = 0``).
    """

    h: float
    rule: str = KAPPA_H4
    kappa: float = 1.0
    beta: float = 5.0

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("h must be positive")
        if self.rule == KAPPA_H4:
            if not self.kappa > 0:
                raise ValueError("kappa_h4 scaling needs kappa > 0 (use sub_h4 for the kappa = 0 limit)")
        elif self.rule == SUB_H4:
            if not self.beta > 4:
                raise ValueError("sub_h4 scaling needs beta > 4")
        else:
            raise ValueError(f"unknown scaling rule {self.rule!r}")

    @property
    def e_h(self):
        if self.rule == KAPPA_H4:
            return self.kappa * self.h**4
        return self.h**self.beta

    @property
    def limit_kappa(self):
        return self.kappa if self.rule == KAPPA_H4 else 0.0

    @property
    def amplitude(self):
        """Displacement scale ``sqrt(e_h) / h``."""
        return np.sqrt(self.e_h) / self.h

    @property
    def force_scale(self):
        """Force scale ``h sqrt(e_h)``."""
        return self.h * np.sqrt(self.e_h)

    def with_h(self, h):
        return replace(self, h=float(h))

    def to_dict(self):
        return {"h": self.h, "rule": self.rule, "kappa": self.kappa, "beta": self.beta, "e_h": self.e_h}


@dataclass(frozen=True)
class Forcing:
    """Surface force density ``f(t, x)``, constant through the thickness.

    ``field`` is a callable ``field(t, geo, chart) -> (P, 3)`` (see
    :mod:`shellvk.fields`) or None for no forcing.
    """

    field: object = None
    zero_mean: bool = False

    @classmethod
    def none(cls):
        return cls(None)

    @property
    def active(self):
        return self.field is not None

    def values(self, t, geo, chart):
        if self.field is None:
            return np.zeros_like(geo.x)
        return np.asarray(self.field(t, geo, chart), dtype=float)

    def mean(self, chart, t, cells=16, npts=4):
        from .geometry import chart_quadrature
        pts, W = chart_quadrature(chart, cells, cells, npts)
        geo = chart.geometry(pts.reshape(-1, 2))
        w = (geo.area_element.reshape(pts.shape[:2]) * W).ravel()
        return w @ self.values(t, geo, chart)

    def check_zero_mean(self, chart, times, tol=1e-10):
        if not self.zero_mean:
            return
        for t in times:
            m = self.mean(chart, t)
            if np.linalg.norm(m) > tol:
                raise InputError(f"forcing flagged zero-mean has integral {m} at t = {t}")


class _Degenerate(Exception):
    """Raised internally when a trial configuration has det grad_h y <= 0."""


class ShellProblem:
    """Discrete operators of the rescaled problem for one mesh, material and thickness.

    Parameters
    ----------
    mesh : ShellMesh
    material : MaterialModel
    scaling : ScalingLaw
    clamped : bool
        Pin the lateral boundary to the rest map.  ``False`` gives a free
        configuration, used to test objectivity.
    """

    def __init__(self, mesh, material, scaling, clamped=True, newton_tol=1e-10, newton_maxit=30):
        if scaling.h > mesh.h0 * (1 + 1e-12):
            raise ValueError(f"h = {scaling.h} exceeds h0 = {mesh.h0}")
        self.mesh = mesh
        self.material = material
        self.scaling = scaling
        self.clamped = clamped
        self.newton_tol = newton_tol
        self.newton_maxit = newton_maxit
        h = scaling.h
        _, Wref, N, dN = mesh.reference_quadrature
        J = mesh.jacobian(h)
        det = np.linalg.det(J)
        if np.any(det * mesh.chart.orientation <= 0):
            raise GeometryError("degenerate rescaled element Jacobian")
        Jinv = np.linalg.inv(J)
        self.N = N
        self.G = np.einsum("qaj,eqjk->eqak", dN, Jinv)
        self.w = np.abs(det) / h * Wref[None, :]
        self.conn = mesh.conn
        E, n = self.conn.shape
        self.n_nodes = mesh.n_nodes
        self.ndof = 3 * self.n_nodes
        self.edofs = (3 * self.conn[:, :, None] + np.arange(3)).reshape(E, 3 * n)
        fixed = np.repeat(mesh.lateral, 3) if clamped else np.zeros(self.ndof, bool)
        self.fixed = fixed
        self.free = np.flatnonzero(~fixed)
        self.rest = mesh.rest_positions(h)
        self._rows = np.repeat(self.edofs, 3 * n, axis=1).ravel()
        self._cols = np.tile(self.edofs, (1, 3 * n)).ravel()
        self._lu = None
        self._lu_dt = None

    @property
    def h(self):
        return self.scaling.h

    @cached_property
    def mass(self):
        """Consistent mass matrix on vector DOFs (``int <phi_a, phi_b> dmu``)."""
        Me = np.einsum("eq,qa,qb->eab", self.w, self.N, self.N)
        E, n = self.conn.shape
        rows = np.repeat(self.conn, n, axis=1).ravel()
        cols = np.tile(self.conn, (1, n)).ravel()
        Ms = sp.csr_matrix((Me.ravel(), (rows, cols)), shape=(self.n_nodes,) * 2)
        return sp.kron(Ms, sp.identity(3), format="csr")

    @cached_property
    def mass_free(self):
        return self.mass[self.free][:, self.free].tocsc()

    # -- kinematics ---------------------------------------------------------

    def hgrad(self, u):
        """``grad_h u`` at all quadrature points, shape (E, Q, 3, 3)."""
        return np.matmul(np.swapaxes(u[self.conn], 1, 2)[:, None], self.G)

    def _admissible(self, H):
        det = np.linalg.det(np.eye(3) + H)
        if np.any(det <= 0):
            raise _Degenerate(float(det.min()))
        return H

    # -- energies and forces --------------------------------------------------

    def elastic_energy(self, u):
        return float(np.sum(self.w * energy_density_h(self.material, self.hgrad(u))))

    def kinetic_energy(self, v):
        vf = v.ravel()
        return 0.5 * self.h**2 * float(vf @ (self.mass @ vf))

    def _scatter(self, local):
        return np.bincount(self.edofs.ravel(), weights=local.ravel(), minlength=self.ndof)

    def internal_force(self, u, check=False):
        """Gradient of the elastic energy with respect to nodal displacements (flat)."""
        H = self.hgrad(u)
        if check:
            self._admissible(H)
        P = stress_h(self.material, H)
        wP = self.w[..., None, None] * P
        local = np.matmul(self.G, np.swapaxes(wP, 2, 3)).sum(axis=1)
        return self._scatter(local)

    def stiffness(self, u):
        """Analytic tangent (Hessian of the elastic energy), sparse CSR."""
        H = self.hgrad(u)
        C = tangent(self.material, np.eye(3) + H)
        CG = np.einsum("eqiJkL,eqbL->eqiJbk", C, self.G)
        Ke = np.einsum("eq,eqaJ,eqiJbk->eaibk", self.w, self.G, CG)
        return sp.csr_matrix((Ke.ravel(), (self._rows, self._cols)), shape=(self.ndof,) * 2)

    def load_from_values(self, values):
        """Nodal load ``int <g, phi_a> dmu`` for values ``g`` at quadrature points (E, Q, 3)."""
        local = np.einsum("eq,qa,eqi->eai", self.w, self.N, values)
        return self._scatter(local)

    def surface_load(self, forcing, t):
        """Nodal load of the scaled force ``h sqrt(e_h) f(t, x)``."""
        if forcing is None or not forcing.active:
            return np.zeros(self.ndof)
        geo = self.mesh.qp_geometry
        vals = forcing.values(t, geo, self.mesh.chart).reshape(self.w.shape + (3,))
        return self.scaling.force_scale * self.load_from_values(vals)

    def max_so3_distance(self, u):
        return float(dist_so3(np.eye(3) + self.hgrad(u)).max())

    # -- linear algebra -------------------------------------------------------

    def _factor(self, u_mid, dt):
        c = 2 * self.h**2 / dt**2
        K = self.stiffness(u_mid)[self.free][:, self.free]
        self._lu = splu((c * self.mass_free + 0.5 * K).tocsc())
        self._lu_dt = dt


def finite_difference_tangent(problem, u, eps=1e-6):
    """Central-difference Jacobian of :meth:`ShellProblem.internal_force` (dense).

    Test oracle and fallback for tiny meshes; cost grows with the DOF count.
    """
    flat = u.ravel().astype(float)
    K = np.empty((problem.ndof, problem.ndof))
    for j in range(problem.ndof):
        up, um = flat.copy(), flat.copy()
        up[j] += eps
        um[j] -= eps
        K[:, j] = (problem.internal_force(up.reshape(u.shape)) - problem.internal_force(um.reshape(u.shape))) / (2 * eps)
    return K


@dataclass(frozen=True, eq=False)
class State3D:
    """Snapshot ``(y, v, t)`` stored as displacement from the rest map.

    ``info`` records per-step diagnostics (work, energy, slack, Newton
    iterations, dt halvings, energy-inequality flag).
    """

    problem: ShellProblem
    u: np.ndarray
    v: np.ndarray
    t: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def y(self):
        return self.problem.rest + self.u

    @property
    def mesh(self):
        return self.problem.mesh

    @property
    def scaling(self):
        return self.problem.scaling

    def check(self):
        fixed = self.problem.fixed.reshape(-1, 3)
        if np.any(self.u[fixed] != 0) or np.any(self.v[fixed] != 0):
            raise StateError("lateral boundary nodes are not at the clamped rest position")
        return self


def state_from_arrays(problem, u, v=None, t=0.0):
    u = np.array(u, dtype=float).reshape(problem.n_nodes, 3)
    v = np.zeros_like(u) if v is None else np.array(v, dtype=float).reshape(problem.n_nodes, 3)
    return State3D(problem, u, v, float(t)).check()


def energy(state):
    """Kinetic and elastic parts of ``int (h^2/2)|y_t|^2 + W(grad_h y)``."""
    p = state.problem
    return p.kinetic_energy(state.v), p.elastic_energy(state.u)


def total_energy(state):
    return sum(energy(state))


def hgradient(state, element, qp):
    """``grad_h y`` at one quadrature point of one element."""
    p = state.problem
    return np.eye(3) + np.einsum("ai,aj->ij", state.u[p.conn[element]], p.G[element, qp])


def assemble_residual(state, forcing=None, acceleration=None):
    """Galerkin residual of the rescaled weak form, shape (n_nodes, 3).

    ``R_a = int DW(grad_h y) : grad_h phi_a - h sqrt(e_h) <f, phi_a>
    (+ h^2 <y_tt, phi_a>)``; entries on clamped DOFs are zero.  Face
    tractions vanish naturally.
    """
    state.check()
    p = state.problem
    R = p.internal_force(state.u) - p.surface_load(forcing, state.t)
    if acceleration is not None:
        R = R + p.h**2 * (p.mass @ np.asarray(acceleration, float).ravel())
    R[p.fixed] = 0.0
    return R.reshape(-1, 3)


def init_state(problem, displacement=None, velocity=None, lift="kirchhoff", t=0.0):
    """Initial state from h-independent chart fields.

    ``y(0) = rest + (sqrt(e_h)/h) wbar`` and ``v(0) = (sqrt(e_h)/h) what``.
    With ``lift="kirchhoff"`` a field ``W(x)`` is extended through the
    thickness as ``W + (s h/h0) A_W n`` with ``A_W n = -(grad W)^T n``, which
    removes the transverse shear that an s-independent bending field would
    carry; ``lift="plain"`` uses ``W`` unchanged.

    Fields are objects with ``evaluate(geo, chart) -> (values, xi_derivatives)``.
    """
    if lift not in ("kirchhoff", "plain"):
        raise ValueError(f"unknown lift {lift!r}")
    mesh = problem.mesh
    geo = mesh.surface_nodes
    ms = len(mesh.s)
    sigma = (problem.h / mesh.h0) * mesh.node_s[:, None]
    amp = problem.scaling.amplitude

    def lifted(f):
        if f is None:
            return np.zeros((problem.n_nodes, 3))
        val, grad = f.evaluate(geo, mesh.chart)
        out = np.repeat(val, ms, axis=0)
        if lift == "kirchhoff":
            An = -np.einsum("pki,pk,pmi->pm", grad, geo.n, geo.dual)
            out = out + sigma * np.repeat(An, ms, axis=0)
        return amp * out

    u, v = lifted(displacement), lifted(velocity)
    fixed = problem.fixed.reshape(-1, 3)
    for name, arr in (("displacement", u), ("velocity", v)):
        scale = max(1.0, float(np.abs(arr).max(initial=0.0)))
        if np.abs(arr[fixed]).max(initial=0.0) > 1e-12 * scale:
            raise InputError(f"initial {name} does not vanish on the clamped boundary")
        arr[fixed] = 0.0
    return State3D(problem, u, v, float(t))


def _newton(problem, u, v, dt, b, scheme):
    """Solve one step for the increment ``D = u_{n+1} - u_n``; returns (D, iterations)."""
    c = 2 * problem.h**2 / dt**2
    free = problem.free
    M = problem.mass
    cMv = c * dt * (M @ v.ravel())
    u0 = u.ravel()

    def force(D):
        if scheme == MIDPOINT:
            return problem.internal_force((u0 + 0.5 * D).reshape(u.shape), check=True)
        g = sum(problem.internal_force((u0 + th * D).reshape(u.shape), check=True) for th in _AVF_THETA)
        return 0.5 * g

    D = np.zeros(problem.ndof)
    scale = max(np.linalg.norm(cMv[free]), np.linalg.norm(problem.internal_force(u)[free]),
                np.linalg.norm(b[free]))
    if scale == 0.0:
        return D, 0
    R = (c * (M @ D) - cMv + force(D) - b)[free]
    if problem._lu is None or problem._lu_dt != dt:
        problem._factor(u, dt)
    refreshed = False
    for it in range(1, problem.newton_maxit + 1):
        D[free] -= problem._lu.solve(R)
        R = (c * (M @ D) - cMv + force(D) - b)[free]
        if np.linalg.norm(R) <= problem.newton_tol * scale:
            return D, it
        if it >= 8 and not refreshed:
            problem._factor((u0 + 0.5 * D).reshape(u.shape), dt)
            refreshed = True
    raise _NotConverged(float(np.linalg.norm(R) / scale))


class _NotConverged(Exception):
    pass


def _advance(state, dt, forcing, scheme):
    p = state.problem
    b = p.surface_load(forcing, state.t + 0.5 * dt)
    D, its = _newton(p, state.u, state.v, dt, b, scheme)
    Dn = D.reshape(-1, 3)
    u = state.u + Dn
    v = 2.0 * Dn / dt - state.v
    fixed = p.fixed.reshape(-1, 3)
    u[fixed] = 0.0
    v[fixed] = 0.0
    return State3D(p, u, v, state.t + dt), float(b @ D), its


def step(state, dt, forcing=None, scheme=AVF, tol_energy=None, max_halvings=5):
    """Advance by ``dt`` with an energy-consistent implicit scheme.

    ``scheme="midpoint"`` is the implicit midpoint rule; ``scheme="avf"``
    replaces the midpoint force by its average along the step (exact energy
    balance for the quartic St. Venant-Kirchhoff energy).  Nonlinear systems
    are solved by Newton's method with a reused factorization.  A step whose
    trial configuration degenerates or whose Newton iteration stalls is
    retried with ``dt`` halved, up to ``max_halvings`` times.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if scheme not in (MIDPOINT, AVF):
        raise ValueError(f"unknown scheme {scheme!r}")
    p = state.problem
    e0 = total_energy(state)
    last = None
    for k in range(max_halvings + 1):
        sub = dt / 2**k
        cur, work, its = state, 0.0, 0
        try:
            for _ in range(2**k):
                cur, w, i = _advance(cur, sub, forcing, scheme)
                work += w
                its += i
        except (_Degenerate, _NotConverged) as exc:
            last = exc
            p._lu = None
            continue
        dist = p.max_so3_distance(cur.u)
        if dist > MAX_SO3_DISTANCE:
            raise SolverError("deformation left the small-strain neighbourhood of SO(3)",
                              {"t": cur.t, "max_dist_so3": dist})
        e1 = total_energy(cur)
        slack = e1 - e0 - work
        info = {"work": work, "energy": e1, "slack": slack, "newton_iterations": its,
                "halvings": k, "max_dist_so3": dist,
                "energy_violation": bool(tol_energy is not None and slack > tol_energy)}
        return State3D(p, cur.u, cur.v, state.t + dt, info)
    kind = "degenerate deformation gradient" if isinstance(last, _Degenerate) else "Newton did not converge"
    raise SolverError(f"time step failed after {max_halvings} halvings: {kind}",
                      {"t": state.t, "dt": dt, "detail": last.args[0] if last and last.args else None})
