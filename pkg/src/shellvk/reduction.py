"""Convergence witnesses computed from 3D states and their limits from 2D states.

All surface fields are compared at the Gauss points of the in-plane cells of
the 3D mesh, weighted by the chart area element.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .basis import gauss, lagrange
from .errors import DiagnosticsError, InputError
from .geometry import chart_quadrature
from .material import QuadraticForms, nearest_rotation, stress
from .solver3d import State3D


# -- surface fields on the 3D node grid -------------------------------------------------

@dataclass(frozen=True, eq=False)
class SurfaceField:
    """Lagrange field on the in-plane node grid of a shell mesh, values (m1*m2, d)."""

    mesh: object
    values: np.ndarray

    def at(self, xi):
        """Values (P, d) and chart derivatives (P, d, 2) at chart points."""
        m = self.mesh
        xi = m.chart.check(np.atleast_2d(xi))
        (a1, _), (a2, _) = m.chart.bounds
        h1, h2 = m.cell_size[:2]
        i = np.clip(np.floor((xi[:, 0] - a1) / h1).astype(int), 0, m.n1 - 1)
        j = np.clip(np.floor((xi[:, 1] - a2) / h2).astype(int), 0, m.n2 - 1)
        t1 = 2 * (xi[:, 0] - (a1 + i * h1)) / h1 - 1
        t2 = 2 * (xi[:, 1] - (a2 + j * h2)) / h2 - 1
        p = m.order
        N1, d1 = lagrange(p, t1)
        N2, d2 = lagrange(p, t2)
        m2 = len(m.xi2)
        ia = i[:, None] * p + np.arange(p + 1)[None, :]
        jb = j[:, None] * p + np.arange(p + 1)[None, :]
        idx = ia[:, :, None] * m2 + jb[:, None, :]  # (P, p+1, p+1)
        vals = self.values[idx]  # (P, p+1, p+1, d)
        v = np.einsum("pa,pb,pabd->pd", N1, N2, vals)
        g1 = np.einsum("pa,pb,pabd->pd", d1, N2, vals) * 2 / h1
        g2 = np.einsum("pa,pb,pabd->pd", N1, d2, vals) * 2 / h2
        return v, np.stack([g1, g2], axis=-1)

    def evaluate(self, geo, chart):
        return self.at(geo.xi)


@lru_cache(maxsize=None)
def _thickness_weights(ns, order_s, h0):
    """Nodal weights of the averages ``fint N_k ds`` and ``fint s N_k ds``."""
    t, w = gauss(order_s + 2)
    N, _ = lagrange(order_s, t)
    ds = h0 / ns
    m0 = np.zeros(ns * order_s + 1)
    m1 = np.zeros_like(m0)
    for c in range(ns):
        s = -h0 / 2 + (c + 0.5) * ds + 0.5 * ds * t
        sl = slice(c * order_s, c * order_s + order_s + 1)
        m0[sl] += (w * 0.5 * ds) @ N / h0
        m1[sl] += (w * 0.5 * ds * s) @ N / h0
    return m0, m1


def _layers(state):
    m = state.mesh
    return state.u.reshape(len(m.xi1) * len(m.xi2), len(m.s), 3)


def scaled_average(state, velocity=False):
    """``V^h = (h / sqrt(e_h)) fint (y - x) ds`` (or its time derivative) on the node grid."""
    m = state.mesh
    w0, _ = _thickness_weights(m.ns, m.order_s, m.h0)
    data = state.v.reshape(_layers(state).shape) if velocity else _layers(state)
    # rest map minus x is odd in s and averages to zero
    return SurfaceField(m, np.einsum("k,pkc->pc", w0, data) / state.scaling.amplitude)


def first_moment(state):
    """``zeta^h = fint s (y - rest) ds`` and ``zeta^h / sqrt(e_h)`` on the node grid."""
    m = state.mesh
    _, w1 = _thickness_weights(m.ns, m.order_s, m.h0)
    zeta = np.einsum("k,pkc->pc", w1, _layers(state))
    return SurfaceField(m, zeta), SurfaceField(m, zeta / np.sqrt(state.scaling.e_h))


def surface_points(mesh):
    """In-plane Gauss points of the mesh cells and their area weights."""
    pts, W = chart_quadrature(mesh.chart, mesh.n1, mesh.n2, mesh.quad)
    xi = pts.reshape(-1, 2)
    geo = mesh.chart.geometry(xi)
    return xi, geo, (geo.area_element.reshape(pts.shape[:2]) * W).ravel()


def tangential_strain(geo, dV):
    """``sym(grad V)_tan`` in the frame from chart derivatives ``dV`` (P, 3, 2)."""
    grad = np.einsum("pci,pmi->pcm", dV, geo.dual)
    G = np.einsum("pma,pmk,pkb->pab", geo.frame, grad, geo.frame)
    return 0.5 * (G + np.swapaxes(G, 1, 2))


def scaled_strain(Vh, h, xi=None, method="exact"):
    """``(1/h) sym(grad V^h)_tan`` at chart points.

    ``method="exact"`` differentiates the finite element field;
    ``method="fd"`` uses second-order finite differences of the node values
    on the grid (returned at the grid nodes, ``xi`` ignored).
    """
    m = Vh.mesh
    if method == "fd":
        m1, m2 = len(m.xi1), len(m.xi2)
        vals = Vh.values.reshape(m1, m2, -1)
        d1 = np.gradient(vals, m.xi1, axis=0, edge_order=2)
        d2 = np.gradient(vals, m.xi2, axis=1, edge_order=2)
        dV = np.stack([d1, d2], axis=-1).reshape(m1 * m2, -1, 2)
        return tangential_strain(m.surface_nodes, dV) / h
    if xi is None:
        xi = surface_points(m)[0]
    geo = m.chart.geometry(xi)
    return tangential_strain(geo, Vh.at(xi)[1]) / h


def _through_thickness(mesh, arr):
    """Reshape (E, Q, ...) to (n1, n2, qa, qb, ns, qs, ...) and return in-plane-major layout."""
    n1, n2, ns, q, qs = mesh.n1, mesh.n2, mesh.ns, mesh.quad, mesh.quad_s
    a = arr.reshape((n1, n2, ns, q, q, qs) + arr.shape[2:])
    # -> (n1, n2, q, q, ns, qs, ...)
    return np.moveaxis(a, 2, 4)


def _s_weights(mesh):
    """Weights of ``fint . ds`` and ``fint s . ds`` over (ns, qs) quadrature points."""
    t, w = gauss(mesh.quad_s)
    ds = mesh.h0 / mesh.ns
    s = -mesh.h0 / 2 + (np.arange(mesh.ns)[:, None] + 0.5) * ds + 0.5 * ds * t[None, :]
    w0 = np.broadcast_to(w * 0.5 * ds / mesh.h0, s.shape)
    return w0, w0 * s


def rotation_surrogate(state):
    """Polar rotation of the thickness-averaged ``grad_h y`` with strain and stress fields.

    Returns ``R`` at the in-plane points (P, 3, 3), ``G^h`` and ``E^h`` at the
    3D quadrature points (E, Q, 3, 3), and the moments ``Ebar = fint E ds``
    and ``Ehat = fint s E ds`` at the in-plane points (P, 3, 3).
    """
    p = state.problem
    m = p.mesh
    F = np.eye(3) + p.hgrad(state.u)
    w0, w1 = _s_weights(m)
    Fl = _through_thickness(m, F)
    Fbar = np.einsum("ks,abcdksij->abcdij", w0, Fl).reshape(-1, 3, 3)
    sv = np.linalg.svd(Fbar, compute_uv=False)
    if np.any(sv[:, -1] <= 1e-12 * sv[:, 0]):
        raise DiagnosticsError("rank-deficient thickness-averaged gradient")
    R = nearest_rotation(Fbar)
    se = np.sqrt(state.scaling.e_h)
    Rl = R.reshape(m.n1, m.n2, m.quad, m.quad, 3, 3)
    RtF = np.einsum("abcdji,abcdksjl->abcdksil", Rl, Fl)
    # G = (R^T F - Id)/sqrt(e); E = DW(R^T F)/sqrt(e)
    Gl = (RtF - np.eye(3)) / se
    El = stress(p.material, RtF) / se
    Ebar = np.einsum("ks,abcdksij->abcdij", w0, El).reshape(-1, 3, 3)
    Ehat = np.einsum("ks,abcdksij->abcdij", w1, El).reshape(-1, 3, 3)
    back = lambda a: np.moveaxis(a, 4, 2).reshape(F.shape)
    return {"R": R, "G": back(Gl), "E": back(El), "Ebar": Ebar, "Ehat": Ehat}


def energy_ratio(state):
    """Scaled elastic energy ``int W(grad_h y) dmu / e_h``."""
    return state.problem.elastic_energy(state.u) / state.scaling.e_h


def h1_distance_to_projection(state):
    """``||y^h - pi||_{H^1}`` on the reference domain of thickness h0."""
    p = state.problem
    m = p.mesh
    sigma = (p.h / m.h0) * m.node_s[:, None] * m.node_n
    d = sigma + state.u
    J = m.jacobian(m.h0)
    _, Wref, N, dN = m.reference_quadrature
    w = np.abs(np.linalg.det(J)) * Wref[None, :]
    G = np.einsum("qaj,eqjk->eqak", dN, np.linalg.inv(J))
    de = d[m.conn]
    val = np.einsum("qa,eac->eqc", N, de)
    grad = np.einsum("eac,eqak->eqck", de, G)
    return float(np.sqrt(np.sum(w * (np.sum(val**2, -1) + np.sum(grad**2, (-2, -1))))))


# -- diagnostics and limits ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Diagnostics:
    """Convergence witnesses of one 3D state."""

    t: float
    h: float
    e_h: float
    Vh: SurfaceField
    Vh_t: SurfaceField
    zeta_h: SurfaceField
    zeta_scaled: SurfaceField
    strain_h: np.ndarray
    Rh: np.ndarray
    Gh: np.ndarray
    Eh: np.ndarray
    Ebar: np.ndarray
    Ehat: np.ndarray
    energy_ratio: float
    h1_distance: float


def diagnostics(state):
    m = state.mesh
    xi, geo, _ = surface_points(m)
    Vh = scaled_average(state)
    zeta, zs = first_moment(state)
    rot = rotation_surrogate(state)
    T = geo.frame
    tan = lambda M: np.einsum("pma,pmk,pkb->pab", T, M, T)
    return Diagnostics(
        t=state.t, h=state.scaling.h, e_h=state.scaling.e_h, Vh=Vh,
        Vh_t=scaled_average(state, velocity=True), zeta_h=zeta, zeta_scaled=zs,
        strain_h=scaled_strain(Vh, state.scaling.h, xi), Rh=rot["R"], Gh=rot["G"], Eh=rot["E"],
        Ebar=tan(rot["Ebar"]), Ehat=tan(rot["Ehat"]), energy_ratio=energy_ratio(state),
        h1_distance=h1_distance_to_projection(state))


def membrane_gradient_at(space, um, xi):
    """Chart derivatives (P, 3, 2) of a bilinear membrane field inside the cells holding ``xi``."""
    um = np.asarray(um).reshape(-1, 3)
    cell, tt = space.locate(xi)
    i, j = np.divmod(cell, space.n2)
    u, v = 0.5 * (tt[:, 0] + 1), 0.5 * (tt[:, 1] + 1)
    corners = [(0, 0), (0, 1), (1, 0), (1, 1)]
    dN = np.stack([np.stack([(2 * ca - 1) * (v if cb else 1 - v) / space.hx,
                             (u if ca else 1 - u) * (2 * cb - 1) / space.hy], axis=1)
                   for ca, cb in corners], axis=1)
    nodes = np.stack([(i + ca) * space.m2 + j + cb for ca, cb in corners], axis=1)
    return np.einsum("pbi,pbc->pci", dN, um[nodes])


def membrane_strain_at(space, um, xi):
    """``B = sym(grad u_m)_tan`` of a bilinear membrane field at chart points."""
    return tangential_strain(space.chart.geometry(xi), membrane_gradient_at(space, um, xi))


def adjacent_average(space, xi, fn):
    """Average of a cellwise field over the 2D cells touching each point.

    Points inside a cell get that cell's value; points on cell edges or
    vertices get the mean over the two or four neighbouring cells.
    """
    (a1, b1), (a2, b2) = space.chart.bounds
    d = 1e-9 * np.array([space.hx, space.hy])
    lo, hi = np.array([a1, a2]), np.array([b1, b2])
    vals = [fn(np.clip(xi + d * np.array(sg), lo, hi)) for sg in ((1, 1), (1, -1), (-1, 1), (-1, -1))]
    return sum(vals) / 4.0


def limit_fields(state2d, xi, h0):
    """Limit fields at chart points: V, V_t, (h0/12) An, B, stress moments."""
    p = state2d.problem
    sp_ = p.space
    q = p.Z @ state2d.r
    kin = sp_.kinematics_at(q.reshape(-1, 3), xi)
    Vt = sp_.evaluate((p.Z @ state2d.rt).reshape(-1, 3), xi)[0]
    B = membrane_strain_at(sp_, state2d.membrane.um, xi)
    geo = sp_.chart.geometry(xi)
    T = geo.frame
    A = kin["A"]
    C = 0.5 * np.sqrt(p.kappa) * np.einsum("pma,pmk,pkl,plb->pab", T, A, A, T)
    forms = QuadraticForms(p.material)
    return {"V": kin["V"], "Vt": Vt, "zeta": (h0 / 12.0) * kin["An"], "B": B,
            "Ebar": forms.l2_apply(None, B - C), "Ehat": (h0 / 12.0) * forms.l2_apply(None, kin["K"])}


def _l2(weights, diff):
    return float(np.sqrt(np.sum(weights * np.sum(diff.reshape(len(weights), -1) ** 2, axis=1))))


QUANTITIES = ("V", "Vt", "zeta", "strain", "Ebar", "Ehat", "h1")


def distances(diag, state2d, mesh):
    """L2 distances between 3D witnesses and their limits at one time."""
    xi, _, w = surface_points(mesh)
    lim = limit_fields(state2d, xi, mesh.h0)
    return {
        "V": _l2(w, diag.Vh.at(xi)[0] - lim["V"]),
        "Vt": _l2(w, diag.Vh_t.at(xi)[0] - lim["Vt"]),
        "zeta": _l2(w, diag.zeta_scaled.at(xi)[0] - lim["zeta"]),
        "strain": _l2(w, diag.strain_h - lim["B"]),
        "Ebar": _l2(w, diag.Ebar - lim["Ebar"]),
        "Ehat": _l2(w, diag.Ehat - lim["Ehat"]),
        "h1": diag.h1_distance,
    }


# -- lifting a limit state to 3D ----------------------------------------------------------

def lift_limit_state(problem3d, state2d, poisson=True):
    """3D state synthesized from a limit state by the well-prepared ansatz.

    With ``sigma = s h / h0``, ``a = sqrt(e_h)/h`` and ``kappa_h = e_h/h^4``::

        y = rest + a (V + sigma A n) + sqrt(e_h) (u_m + sigma t + d n)
        t = -(grad u_m)^T n
        d = -c tr(M) sigma - (sqrt(kappa_h)/2) |A n|^2 sigma - c tr(K) (sigma^2 - h^2/12) / (2h)

    where ``c = lam / (2 mu + lam)``, ``M = (B - (sqrt(kappa_h)/2) A^2)_tan``
    and ``K = (grad(A n) - A Pi)_tan``.  The normal correction realises the
    optimal (relaxed) transverse strain; the shear term removes the
    transverse shear of the membrane displacement.  Velocities use the
    Kirchhoff part only.
    """
    p3 = problem3d
    m = p3.mesh
    p2 = state2d.problem
    sc = p3.scaling
    h, se, a = sc.h, np.sqrt(sc.e_h), sc.amplitude
    kap_h = sc.e_h / h**4
    nodes = m.surface_nodes
    xi = nodes.xi
    ms = len(m.s)
    q = (p2.Z @ state2d.r).reshape(-1, 3)
    qt = (p2.Z @ state2d.rt).reshape(-1, 3)
    kin = p2.space.kinematics_at(q, xi)
    kin_t = p2.space.kinematics_at(qt, xi)
    sigma = (h / m.h0) * m.node_s[:, None]
    rep = lambda arr: np.repeat(arr, ms, axis=0)
    u = a * (rep(kin["V"]) + sigma * rep(kin["An"]))
    v = a * (rep(kin_t["V"]) + sigma * rep(kin_t["An"]))
    um = state2d.membrane.um.reshape(-1, 3)
    sp_ = p2.space
    # membrane displacement and its cellwise gradient at the 3D nodes (bilinear field)
    cell, tt = sp_.locate(xi)
    i, j = np.divmod(cell, sp_.n2)
    uu, vv = 0.5 * (tt[:, 0] + 1), 0.5 * (tt[:, 1] + 1)
    corners = [(0, 0), (0, 1), (1, 0), (1, 1)]
    Nm = np.stack([(uu if ca else 1 - uu) * (vv if cb else 1 - vv) for ca, cb in corners], 1)
    cn = np.stack([(i + ca) * sp_.m2 + j + cb for ca, cb in corners], 1)
    umx = np.einsum("pb,pbc->pc", Nm, um[cn])
    dum = adjacent_average(sp_, xi, lambda pts: membrane_gradient_at(sp_, um, pts))
    grad = np.einsum("pci,pmi->pcm", dum, nodes.dual)
    tshear = -np.einsum("pcm,pc->pm", grad, nodes.n)
    u = u + se * (rep(umx) + sigma * rep(tshear))
    if poisson:
        T = nodes.frame
        Bn = np.einsum("pma,pmk,pkb->pab", T, grad, T)
        Bn = 0.5 * (Bn + np.swapaxes(Bn, 1, 2))
        A = kin["A"]
        A2 = np.einsum("pma,pmk,pkl,plb->pab", T, A, A, T)
        trM = np.trace(Bn - 0.5 * np.sqrt(kap_h) * A2, axis1=1, axis2=2)
        An2 = np.sum(kin["An"] ** 2, axis=1)
        c = p3.material.lam / (2 * p3.material.mu + p3.material.lam)
        K = adjacent_average(sp_, xi, lambda pts: sp_.kinematics_at(q, pts)["K"])
        trK = np.trace(K, axis1=1, axis2=2)
        d = (-c * rep(trM)[:, None] * sigma - 0.5 * np.sqrt(kap_h) * rep(An2)[:, None] * sigma
             - c * rep(trK)[:, None] * (sigma**2 - h**2 / 12) / (2 * h))
        u = u + se * d * m.node_n
    fixed = p3.fixed.reshape(-1, 3)
    u[fixed] = 0.0
    v[fixed] = 0.0
    return State3D(p3, u, v, state2d.t)


# -- reports ----------------------------------------------------------------------------------

@dataclass
class ReportRow:
    h: float
    e_h: float
    energy_ratio_sup: float
    distances: dict  # quantity -> list over sampled times


@dataclass
class ConvergenceReport:
    times: list
    rows: list
    verdicts: dict
    kappa: float = 0.0
    complete: bool = True
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {"times": list(self.times), "kappa": self.kappa, "complete": self.complete,
                "notes": list(self.notes),
                "rows": [{"h": r.h, "e_h": r.e_h, "energy_ratio_sup": r.energy_ratio_sup,
                          "distances": {k: list(v) for k, v in r.distances.items()}} for r in self.rows],
                "verdicts": self.verdicts}


def trend(values, atol=1e-13):
    """Trend verdict of a sequence indexed by decreasing h."""
    v = np.asarray(values, float)
    if np.any(~np.isfinite(v)) or np.any(v < 0):
        raise InputError("distances must be finite and non-negative")
    ratios = [float(v[i + 1] / v[i]) if v[i] > 0 else float("nan") for i in range(len(v) - 1)]
    if np.all(v <= atol):
        verdict = "converged"
    elif np.all(np.diff(v) < 0):
        verdict = "monotone"
    else:
        verdict = "non-monotone"
    return {"verdict": verdict, "ratios": ratios, "non_increasing": bool(np.all(np.diff(v) <= atol))}


def report_from_rows(rows, times, kappa=0.0, complete=True, notes=()):
    """Trend verdicts from per-h rows (sorted here by decreasing h)."""
    rows = sorted(rows, key=lambda r: -r.h)
    verdicts = {}
    names = sorted(set().union(*(r.distances.keys() for r in rows))) if rows else []
    for name in names:
        series = np.array([r.distances[name] for r in rows], float)  # (nh, nt)
        per_time = [trend(series[:, k]) for k in range(series.shape[1])]
        verdicts[name] = {"sup": trend(series.max(axis=1)), "per_time": per_time}
    if rows:
        ratios = [r.energy_ratio_sup for r in rows]
        verdicts["energy_ratio"] = {
            "values": ratios,
            "successive": [ratios[i + 1] / ratios[i] if ratios[i] > 0 else float("nan")
                           for i in range(len(ratios) - 1)],
        }
    return ConvergenceReport(list(times), rows, verdicts, kappa, complete, list(notes))


def build_report(per_h, reference, notes=()):
    """Report from per-h diagnostic series and the reference limit trajectory.

    Parameters
    ----------
    per_h : dict
        ``h -> (mesh, [Diagnostics at sampled times])``.
    reference : list of State2D
        Limit states at the same sampled times.
    """
    if len(per_h) < 1:
        raise InputError("no diagnostics supplied")
    times = [s.t for s in reference]
    rows = []
    for h, (mesh, series) in per_h.items():
        ts = [d.t for d in series]
        if len(ts) != len(times) or not np.allclose(ts, times, rtol=0, atol=1e-12):
            raise InputError(f"time samples for h = {h} do not match the reference")
        dist = {name: [] for name in QUANTITIES}
        for d, ref in zip(series, reference):
            for k, val in distances(d, ref, mesh).items():
                dist[k].append(val)
        rows.append(ReportRow(float(h), series[0].e_h, max(d.energy_ratio for d in series), dist))
    return report_from_rows(rows, times, reference[0].kappa, True, notes)
