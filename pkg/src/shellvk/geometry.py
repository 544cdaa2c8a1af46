"""Midsurface charts, second fundamental form, shifters and extruded shell meshes.

Three analytic single-chart families are supported: a flat plate, a
cylindrical patch and a spherical patch (gnomonic equiangular chart).  The
second fundamental form is stored as an ambient 3x3 matrix ``Pi`` with
``Pi @ tau = d n / d tau`` for tangent ``tau`` and ``Pi @ n = 0``.
"""

import csv
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .basis import gauss, lagrange
from .errors import DomainError, GeometryError

PLATE = "plate"
CYLINDER = "cylinder"
SPHERE = "sphere"
KINDS = (PLATE, CYLINDER, SPHERE)

_DOMAIN_SLACK = 1e-12


@dataclass(frozen=True)
class Chart:
    """Analytic chart ``xi -> x`` of a midsurface.

    Parameters
    ----------
    kind : {"plate", "cylinder", "sphere"}
    bounds : ((a1, b1), (a2, b2))
        Parameter rectangle.  For the cylinder ``xi = (theta, z)``; for the
        sphere ``xi`` are the two gnomonic angles around the pole.
    radius : float
        Cylinder or sphere radius (ignored for the plate).
    orientation : {1, -1}
        Sign applied to the canonical normal (outward for the cylinder and
        the sphere, +e3 for the plate).
    """

    kind: str
    bounds: tuple = ((0.0, 1.0), (0.0, 1.0))
    radius: float = 1.0
    orientation: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown chart kind {self.kind!r}")
        b = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if len(b) != 2 or any(hi <= lo for lo, hi in b):
            raise ValueError(f"bad parameter rectangle {self.bounds!r}")
        object.__setattr__(self, "bounds", b)
        if self.orientation not in (1, -1):
            raise ValueError("orientation must be +1 or -1")
        if self.kind != PLATE and self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.kind == SPHERE and max(abs(v) for pair in b for v in pair) >= np.pi / 2:
            raise ValueError("sphere chart angles must lie in (-pi/2, pi/2)")

    @classmethod
    def plate(cls, lengths=(1.0, 1.0), orientation=1):
        return cls(PLATE, ((0.0, lengths[0]), (0.0, lengths[1])), 1.0, orientation)

    @classmethod
    def cylinder(cls, radius=1.0, theta=(-0.5, 0.5), z=(0.0, 1.0), orientation=1):
        return cls(CYLINDER, (tuple(theta), tuple(z)), radius, orientation)

    @classmethod
    def sphere(cls, radius=1.0, alpha=(-0.5, 0.5), beta=(-0.5, 0.5), orientation=1):
        return cls(SPHERE, (tuple(alpha), tuple(beta)), radius, orientation)

    def to_dict(self):
        return {"kind": self.kind, "bounds": [list(p) for p in self.bounds],
                "radius": self.radius, "orientation": self.orientation}

    # -- evaluation -------------------------------------------------------

    def check(self, xi):
        xi = np.asarray(xi, dtype=float)
        for k, (lo, hi) in enumerate(self.bounds):
            v = xi[..., k]
            if np.any(v < lo - _DOMAIN_SLACK) or np.any(v > hi + _DOMAIN_SLACK):
                raise DomainError(f"chart parameter outside [{lo}, {hi}] in direction {k}")
        return xi

    def jet(self, xi):
        """Position and first/second parameter derivatives.

        Returns ``x`` (P, 3), ``X`` (P, 3, 2) with ``X[:, :, i] = d x / d xi_i``
        and ``XX`` (P, 3, 2, 2).
        """
        xi = np.atleast_2d(self.check(xi))
        P = xi.shape[0]
        x = np.zeros((P, 3))
        X = np.zeros((P, 3, 2))
        XX = np.zeros((P, 3, 2, 2))
        u, v = xi[:, 0], xi[:, 1]
        if self.kind == PLATE:
            x[:, 0], x[:, 1] = u, v
            X[:, 0, 0] = 1.0
            X[:, 1, 1] = 1.0
        elif self.kind == CYLINDER:
            R = self.radius
            c, s = np.cos(u), np.sin(u)
            x[:] = np.stack([R * c, R * s, v], axis=1)
            X[:, :, 0] = np.stack([-R * s, R * c, 0 * u], axis=1)
            X[:, 2, 1] = 1.0
            XX[:, :, 0, 0] = np.stack([-R * c, -R * s, 0 * u], axis=1)
        else:
            R = self.radius
            t1, t2 = np.tan(u), np.tan(v)
            q = np.stack([t1, t2, np.ones_like(t1)], axis=1)
            sec1, sec2 = 1 + t1**2, 1 + t2**2
            dq = np.zeros((P, 3, 2))
            dq[:, 0, 0] = sec1
            dq[:, 1, 1] = sec2
            ddq = np.zeros((P, 3, 2, 2))
            ddq[:, 0, 0, 0] = 2 * sec1 * t1
            ddq[:, 1, 1, 1] = 2 * sec2 * t2
            r = np.linalg.norm(q, axis=1)
            x[:] = R * q / r[:, None]
            qa = np.einsum("pk,pki->pi", q, dq)  # q . q_i
            X[:] = R * (dq / r[:, None, None] - q[:, :, None] * qa[:, None, :] / r[:, None, None] ** 3)
            aa = np.einsum("pki,pkj->pij", dq, dq)
            r3, r5 = r[:, None, None, None] ** 3, r[:, None, None, None] ** 5
            second = (-(dq[:, :, :, None] * qa[:, None, None, :]
                        + dq[:, :, None, :] * qa[:, None, :, None]
                        + q[:, :, None, None] * aa[:, None, :, :]) / r3
                      + 3 * q[:, :, None, None] * qa[:, None, :, None] * qa[:, None, None, :] / r5)
            qaa = np.einsum("pk,pkij->pij", q, ddq)
            first_on_ddq = ddq / r[:, None, None, None] - q[:, :, None, None] * qaa[:, None] / r3
            XX[:] = R * (second + first_on_ddq)
        return x, X, XX

    def map(self, xi):
        return self.jet(xi)[0]

    def geometry(self, xi):
        """All pointwise surface quantities at parameter points ``xi``."""
        x, X, XX = self.jet(xi)
        return SurfacePoints.from_jet(np.atleast_2d(np.asarray(xi, float)), x, X, XX, self.orientation)

    def area(self):
        """Closed-form area of the chart image."""
        (a1, b1), (a2, b2) = self.bounds
        if self.kind == PLATE:
            return (b1 - a1) * (b2 - a2)
        if self.kind == CYLINDER:
            return self.radius * (b1 - a1) * (b2 - a2)

        def prim(X, Y):
            return np.arctan(X * Y / np.sqrt(1 + X**2 + Y**2))

        ta1, tb1, ta2, tb2 = np.tan([a1, b1, a2, b2])
        return self.radius**2 * (prim(tb1, tb2) - prim(ta1, tb2) - prim(tb1, ta2) + prim(ta1, ta2))

    def unit_coords(self, xi):
        """Affine map of the parameter rectangle onto [0, 1]^2."""
        xi = np.asarray(xi, dtype=float)
        (a1, b1), (a2, b2) = self.bounds
        return np.stack([(xi[..., 0] - a1) / (b1 - a1), (xi[..., 1] - a2) / (b2 - a2)], axis=-1)


@dataclass
class SurfacePoints:
    """Surface quantities at a batch of P points.

    ``dual[:, :, i]`` is the dual tangent basis vector X^i, so that the
    surface gradient of a field ``u`` is ``sum_i d_i u (x) X^i``.
    ``ddual[:, :, i, j]`` is ``d_j X^i``.  ``frame`` holds the orthonormal
    tangent frame (tau1, tau2) as columns.
    """

    xi: np.ndarray
    x: np.ndarray
    X: np.ndarray
    XX: np.ndarray
    n: np.ndarray
    dual: np.ndarray
    ddual: np.ndarray
    dn: np.ndarray
    Pi: np.ndarray
    frame: np.ndarray
    area_element: np.ndarray

    @classmethod
    def from_jet(cls, xi, x, X, XX, orientation):
        X1, X2 = X[:, :, 0], X[:, :, 1]
        cr = np.cross(X1, X2)
        jac = np.linalg.norm(cr, axis=1)
        if np.any(jac <= 1e-14):
            raise GeometryError("chart Jacobian is rank deficient")
        n = orientation * cr / jac[:, None]
        g = np.einsum("pki,pkj->pij", X, X)
        ginv = np.linalg.inv(g)
        dual = np.einsum("pki,pij->pkj", X, ginv)
        b = np.einsum("pkij,pk->pij", XX, n)
        # Weingarten: d_i n = -b_ik g^kl X_l
        dn = -np.einsum("pik,pkl,pml->pmi", b, ginv, X)
        Pi = np.einsum("pmi,pki->pmk", dn, dual)
        dg = np.einsum("pkaj,pkb->pabj", XX, X)
        dg = dg + np.swapaxes(dg, 1, 2)
        dginv = -np.einsum("pia,pabj,pbk->pikj", ginv, dg, ginv)
        ddual = np.einsum("pikj,pmk->pmij", dginv, X) + np.einsum("pik,pmkj->pmij", ginv, XX)
        tau1 = X1 / np.linalg.norm(X1, axis=1)[:, None]
        tau2 = np.cross(n, tau1)
        frame = np.stack([tau1, tau2], axis=2)
        return cls(xi, x, X, XX, n, dual, ddual, dn, Pi, frame, jac)

    @property
    def curvatures(self):
        minor = np.einsum("pki,pkl,plj->pij", self.frame, self.Pi, self.frame)
        return np.linalg.eigvalsh(0.5 * (minor + np.swapaxes(minor, 1, 2)))

    def tangential(self, M):
        """Tangential minor ``T^T M T`` of ambient matrices (P, 3, 3)."""
        return np.einsum("pki,pkl,plj->pij", self.frame, M, self.frame)


@dataclass(frozen=True)
class SecondFundamentalForm:
    Pi: np.ndarray
    curvatures: np.ndarray

    @property
    def gauss_curvature(self):
        return float(np.prod(self.curvatures))

    @property
    def mean_trace(self):
        return float(np.trace(self.Pi))


def normal(chart, xi):
    """Unit normal at a single chart point."""
    return chart.geometry(np.asarray(xi, float)[None, :]).n[0]


def second_fundamental_form(chart, xi):
    geo = chart.geometry(np.asarray(xi, float)[None, :])
    return SecondFundamentalForm(geo.Pi[0], geo.curvatures[0])


def shifter(Pi, s):
    """Shifter ``F(s) = Id + s Pi`` with its inverse and determinant.

    ``Pi`` may be a :class:`SecondFundamentalForm` or a 3x3 array.
    """
    if isinstance(Pi, SecondFundamentalForm):
        Pi = Pi.Pi
    F = np.eye(3) + s * np.asarray(Pi, dtype=float)
    det = float(np.linalg.det(F))
    if det <= 0.0:
        raise GeometryError(f"det F(s) = {det:.3g} <= 0 at s = {s}: shell too thick for its curvature")
    return F, np.linalg.inv(F), det


def shifter_det(curvatures, s):
    """Analytic ``det F(s) = (1 + s k1)(1 + s k2)``, broadcast over arrays."""
    k = np.asarray(curvatures)
    return (1 + s * k[..., 0]) * (1 + s * k[..., 1])


def chart_quadrature(chart, n1, n2, npts):
    """Tensor Gauss rule on the uniform ``n1 x n2`` cell grid of the chart.

    Returns parameter points (n1*n2, npts**2, 2) and parameter-space weights
    (npts**2,) times the cell size (uniform cells).
    """
    (a1, b1), (a2, b2) = chart.bounds
    h1, h2 = (b1 - a1) / n1, (b2 - a2) / n2
    t, w = gauss(npts)
    T1, T2 = np.meshgrid(t, t, indexing="ij")
    W = np.outer(w, w).ravel() * h1 * h2 / 4
    ii, jj = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
    c1 = a1 + (ii.ravel() + 0.5) * h1
    c2 = a2 + (jj.ravel() + 0.5) * h2
    pts = np.empty((n1 * n2, npts * npts, 2))
    pts[:, :, 0] = c1[:, None] + 0.5 * h1 * T1.ravel()[None, :]
    pts[:, :, 1] = c2[:, None] + 0.5 * h2 * T2.ravel()[None, :]
    return pts, W


def surface_area(chart, n1, n2, npts=2):
    pts, W = chart_quadrature(chart, n1, n2, npts)
    geo = chart.geometry(pts.reshape(-1, 2))
    return float(np.sum(geo.area_element.reshape(pts.shape[:2]) * W[None, :]))


@dataclass(frozen=True, eq=False)
class ShellMesh:
    """Structured hexahedral mesh of ``S^{h0}`` in (xi1, xi2, s) coordinates.

    ``n1, n2, ns`` count cells; each cell carries tensor Lagrange shape
    functions of degree ``order`` in-plane and ``order_s`` through the
    thickness.  Node ``(i, j, k)`` has index ``(i * m2 + j) * ms + k``.
    """

    chart: Chart
    n1: int
    n2: int
    ns: int
    h0: float
    order: int = 1
    order_s: int = 1
    quad: int = 2
    quad_s: int = 2
    xi1: np.ndarray = field(repr=False, default=None)
    xi2: np.ndarray = field(repr=False, default=None)
    s: np.ndarray = field(repr=False, default=None)

    @property
    def shape_nodes(self):
        return len(self.xi1), len(self.xi2), len(self.s)

    @property
    def n_nodes(self):
        m1, m2, ms = self.shape_nodes
        return m1 * m2 * ms

    @property
    def n_cells(self):
        return self.n1 * self.n2 * self.ns

    @cached_property
    def node_index(self):
        m1, m2, ms = self.shape_nodes
        return np.arange(m1 * m2 * ms).reshape(m1, m2, ms)

    @cached_property
    def node_xi(self):
        A, B = np.meshgrid(self.xi1, self.xi2, indexing="ij")
        pts = np.stack([A.ravel(), B.ravel()], axis=1)
        return np.repeat(pts, len(self.s), axis=0)

    @cached_property
    def node_s(self):
        m1, m2, _ = self.shape_nodes
        return np.tile(self.s, m1 * m2)

    @cached_property
    def surface_nodes(self):
        """Geometry at the in-plane node grid, (m1*m2) points."""
        A, B = np.meshgrid(self.xi1, self.xi2, indexing="ij")
        return self.chart.geometry(np.stack([A.ravel(), B.ravel()], axis=1))

    @cached_property
    def node_x(self):
        return np.repeat(self.surface_nodes.x, len(self.s), axis=0)

    @cached_property
    def node_n(self):
        return np.repeat(self.surface_nodes.n, len(self.s), axis=0)

    def rest_positions(self, h):
        """Nodal values of the rescaled rest map ``x + (s h / h0) n``."""
        return self.node_x + (h / self.h0) * self.node_s[:, None] * self.node_n

    @cached_property
    def lateral(self):
        """Boolean mask of nodes on the lateral boundary (clamped)."""
        m1, m2, ms = self.shape_nodes
        mask = np.zeros((m1, m2, ms), dtype=bool)
        mask[0], mask[-1], mask[:, 0], mask[:, -1] = True, True, True, True
        return mask.ravel()

    @cached_property
    def conn(self):
        p, ps = self.order, self.order_s
        ii, jj, kk = np.meshgrid(np.arange(p + 1), np.arange(p + 1), np.arange(ps + 1), indexing="ij")
        local = (ii.ravel(), jj.ravel(), kk.ravel())
        cells = []
        for e1 in range(self.n1):
            for e2 in range(self.n2):
                for e3 in range(self.ns):
                    cells.append(self.node_index[e1 * p + local[0], e2 * p + local[1], e3 * ps + local[2]])
        return np.array(cells)

    @cached_property
    def cell_size(self):
        (a1, b1), (a2, b2) = self.chart.bounds
        return np.array([(b1 - a1) / self.n1, (b2 - a2) / self.n2, self.h0 / self.ns])

    @cached_property
    def reference_quadrature(self):
        """Reference points (Q, 3), weights (Q,), N (Q, n) and dN/d(xi1, xi2, s) (Q, n, 3)."""
        t, w = gauss(self.quad)
        ts, ws = gauss(self.quad_s)
        A, B, C = np.meshgrid(t, t, ts, indexing="ij")
        pts = np.stack([A.ravel(), B.ravel(), C.ravel()], axis=1)
        W = np.einsum("i,j,k->ijk", w, w, ws).ravel() * np.prod(self.cell_size) / 8
        N1, d1 = lagrange(self.order, pts[:, 0])
        N2, d2 = lagrange(self.order, pts[:, 1])
        N3, d3 = lagrange(self.order_s, pts[:, 2])
        N = np.einsum("qa,qb,qc->qabc", N1, N2, N3).reshape(len(pts), -1)
        scale = 2.0 / self.cell_size
        dN = np.stack([
            np.einsum("qa,qb,qc->qabc", d1, N2, N3).reshape(len(pts), -1) * scale[0],
            np.einsum("qa,qb,qc->qabc", N1, d2, N3).reshape(len(pts), -1) * scale[1],
            np.einsum("qa,qb,qc->qabc", N1, N2, d3).reshape(len(pts), -1) * scale[2],
        ], axis=2)
        return pts, W, N, dN

    @cached_property
    def qp_param(self):
        """Parameter coordinates (E, Q, 3) of every quadrature point."""
        pts = self.reference_quadrature[0]
        corner = np.array([self.xi1[self.conn[:, 0] // (len(self.xi2) * len(self.s))],
                           self.xi2[(self.conn[:, 0] // len(self.s)) % len(self.xi2)],
                           self.s[self.conn[:, 0] % len(self.s)]]).T
        return corner[:, None, :] + 0.5 * (pts[None, :, :] + 1.0) * self.cell_size[None, None, :]

    @cached_property
    def jacobian_parts(self):
        """``Jx``, ``Jsn`` (E, Q, 3, 3) with ``J_h = Jx + (h/h0) Jsn``."""
        _, _, _, dN = self.reference_quadrature
        xe = self.node_x[self.conn]
        sne = (self.node_s[:, None] * self.node_n)[self.conn]
        Jx = np.einsum("eai,qaj->eqij", xe, dN)
        Jsn = np.einsum("eai,qaj->eqij", sne, dN)
        return Jx, Jsn

    def jacobian(self, h):
        Jx, Jsn = self.jacobian_parts
        return Jx + (h / self.h0) * Jsn

    @cached_property
    def qp_geometry(self):
        """Exact chart geometry at the in-plane location of every quadrature point."""
        xi = self.qp_param[..., :2].reshape(-1, 2)
        return self.chart.geometry(xi)

    def dump_csv(self, nodes_path, cells_path):
        with open(nodes_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "xi1", "xi2", "s", "x", "y", "z"])
            for a in range(self.n_nodes):
                x = self.node_x[a] + self.node_s[a] * self.node_n[a]
                w.writerow([a, *(f"{v:.17g}" for v in (*self.node_xi[a], self.node_s[a], *x))])
        with open(cells_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cell"] + [f"n{k}" for k in range(self.conn.shape[1])])
            for e, row in enumerate(self.conn):
                w.writerow([e, *row.tolist()])


def build_mesh(chart, n1, n2, ns, h0, order=1, order_s=None, quad=None, quad_s=None):
    """Structured extruded mesh over ``rectangle x (-h0/2, h0/2)``.

    Raises :class:`GeometryError` when ``1/2 < det F(s) < 3/2`` fails
    anywhere on the thickness range, or when an element Jacobian degenerates.
    """
    if min(n1, n2, ns) < 1 or order < 1:
        raise ValueError("cell counts and order must be positive")
    if h0 <= 0:
        raise ValueError("h0 must be positive")
    order_s = order if order_s is None else order_s
    quad = order + 1 if quad is None else quad
    quad_s = order_s + 1 if quad_s is None else quad_s
    (a1, b1), (a2, b2) = chart.bounds
    mesh = ShellMesh(chart, n1, n2, ns, float(h0), order, order_s, quad, quad_s,
                     np.linspace(a1, b1, n1 * order + 1),
                     np.linspace(a2, b2, n2 * order + 1),
                     np.linspace(-h0 / 2, h0 / 2, ns * order_s + 1))
    curv = np.concatenate([mesh.qp_geometry.curvatures, mesh.surface_nodes.curvatures])
    for s in (-h0 / 2, h0 / 2):
        det = shifter_det(curv, s)
        if np.any(det <= 0.5) or np.any(det >= 1.5):
            raise GeometryError(
                f"shifter bound 1/2 < det F(s) < 3/2 violated at s = {s:g} "
                f"(range [{det.min():.4g}, {det.max():.4g}])")
    detJ = np.linalg.det(mesh.jacobian(h0)) * chart.orientation
    if np.any(detJ <= 0):
        raise GeometryError("non-positive element Jacobian")
    return mesh


def min_shifter_det(mesh):
    curv = np.concatenate([mesh.qp_geometry.curvatures, mesh.surface_nodes.curvatures])
    return float(min(shifter_det(curv, -mesh.h0 / 2).min(), shifter_det(curv, mesh.h0 / 2).min()))
