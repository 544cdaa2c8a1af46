"""St. Venant-Kirchhoff energy density, its derivatives and the induced quadratic forms.

All functions broadcast over leading axes: ``F`` may have shape (..., 3, 3).
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

STVK = "stvk"

I3 = np.eye(3)


@dataclass(frozen=True)
class MaterialModel:
    """Isotropic St. Venant-Kirchhoff material, ``W = mu |E|^2 + lam/2 (tr E)^2``."""

    mu: float = 1.0
    lam: float = 1.0
    kind: str = STVK

    def __post_init__(self):
        if self.kind != STVK:
            raise ValueError(f"unsupported material kind {self.kind!r}")
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if not self.lam >= 0:
            raise ValueError("lam must be non-negative")

    @classmethod
    def unchecked(cls, mu, lam):
        """Bypass parameter validation (used to build deliberately broken fixtures)."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "mu", float(mu))
        object.__setattr__(obj, "lam", float(lam))
        object.__setattr__(obj, "kind", STVK)
        return obj

    def to_dict(self):
        return {"kind": self.kind, "mu": self.mu, "lam": self.lam}


def _sym(F):
    return 0.5 * (F + np.swapaxes(F, -1, -2))


def _tr(F):
    return np.trace(F, axis1=-2, axis2=-1)


def green_strain(F):
    F = np.asarray(F, dtype=float)
    return 0.5 * (np.swapaxes(F, -1, -2) @ F - I3)


def strain_from_displacement_gradient(H):
    """Green strain written in terms of ``H = F - Id``, free of cancellation."""
    Ht = np.swapaxes(H, -1, -2)
    return 0.5 * (H + Ht + Ht @ H)


def energy_density(m, F):
    return _energy_from_strain(m, green_strain(F))


def _energy_from_strain(m, E):
    return m.mu * np.sum(E * E, axis=(-2, -1)) + 0.5 * m.lam * _tr(E) ** 2


def energy_density_h(m, H):
    """``W(Id + H)`` evaluated through the displacement gradient ``H``."""
    return _energy_from_strain(m, strain_from_displacement_gradient(H))


def second_piola(m, E):
    return 2 * m.mu * E + m.lam * _tr(E)[..., None, None] * I3


def stress(m, F):
    """First Piola-Kirchhoff stress ``DW(F) = F (2 mu E + lam tr(E) Id)``."""
    F = np.asarray(F, dtype=float)
    return F @ second_piola(m, green_strain(F))


def stress_h(m, H):
    """``DW(Id + H)`` evaluated through ``H``."""
    S = second_piola(m, strain_from_displacement_gradient(H))
    return S + H @ S


def tangent(m, F):
    """Fourth-order tangent ``D^2 W(F)`` with index order (i, J, k, L)."""
    F = np.asarray(F, dtype=float)
    S = second_piola(m, green_strain(F))
    FFt = F @ np.swapaxes(F, -1, -2)
    return (np.einsum("ik,...LJ->...iJkL", I3, S)
            + m.mu * np.einsum("...ik,JL->...iJkL", FFt, I3)
            + m.mu * np.einsum("...iL,...kJ->...iJkL", F, F)
            + m.lam * np.einsum("...iJ,...kL->...iJkL", F, F))


def q3(m, F):
    """Linearized energy ``Q3(F) = D^2 W(Id)(F, F) = 2 mu |sym F|^2 + lam (tr F)^2``."""
    S = _sym(np.asarray(F, dtype=float))
    return 2 * m.mu * np.sum(S * S, axis=(-2, -1)) + m.lam * _tr(S) ** 2


def l3_apply(m, F):
    """``L3 F`` with ``Q3(F) = L3 F : F``."""
    S = _sym(np.asarray(F, dtype=float))
    return 2 * m.mu * S + m.lam * _tr(S)[..., None, None] * I3


# Symmetric normal directions completing a tangential 2x2 block, in frame coordinates.
_NORMAL_DIRS = np.array([
    [[0, 0, 1], [0, 0, 0], [1, 0, 0]],
    [[0, 0, 0], [0, 0, 1], [0, 1, 0]],
    [[0, 0, 0], [0, 0, 0], [0, 0, 1]],
], dtype=float)


@dataclass(frozen=True)
class QuadraticForms:
    """Relaxed two-dimensional forms ``Q2(x, .)`` and ``L2(x, .)``.

    Tangential arguments are 2x2 matrices in the orthonormal tangent frame.
    For an isotropic material the forms do not depend on the surface point;
    the ``x`` argument is accepted for interface stability.
    """

    material: MaterialModel

    @property
    def l2_closed_form(self):
        mu, lam = self.material.mu, self.material.lam
        return 2 * mu, 2 * mu * lam / (2 * mu + lam)

    def minimizer(self, G, x=None):
        """Extension ``F~`` (frame coordinates) with tangential block ``G`` minimizing Q3."""
        G = np.asarray(G, dtype=float)
        F0 = np.zeros(G.shape[:-2] + (3, 3))
        F0[..., :2, :2] = G
        L = l3_apply(self.material, _NORMAL_DIRS)
        H = np.einsum("kij,lij->kl", L, _NORMAL_DIRS)
        rhs = -np.einsum("...ij,kij->...k", l3_apply(self.material, F0), _NORMAL_DIRS)
        z = rhs @ np.linalg.inv(H)  # H is symmetric
        return F0 + np.einsum("...k,kij->...ij", z, _NORMAL_DIRS)

    def q2(self, x, G):
        return q3(self.material, self.minimizer(G, x))

    def l2_apply(self, x, G):
        """``L2(x, G)``: tangential block of ``L3`` applied to the optimal extension."""
        return l3_apply(self.material, self.minimizer(G, x))[..., :2, :2]

    def l2_matrix(self):
        """4x4 matrix of L2 acting on row-major flattened 2x2 matrices."""
        a, b = self.l2_closed_form
        eye = np.eye(4)
        swap = eye[[0, 2, 1, 3]]
        vecI = np.array([1.0, 0.0, 0.0, 1.0])
        return a * 0.5 * (eye + swap) + b * np.outer(vecI, vecI)


# --- rotations ----------------------------------------------------------------

def random_rotations(rng, size):
    return Rotation.random(size, random_state=rng).as_matrix()


def nearest_rotation(F):
    """Rotation factor of the polar decomposition (closest point of SO(3))."""
    U, _, Vt = np.linalg.svd(np.asarray(F, dtype=float))
    d = np.sign(np.linalg.det(U @ Vt))
    U = U.copy()
    U[..., :, 2] *= d[..., None]
    return U @ Vt


def dist_so3(F):
    F = np.asarray(F, dtype=float)
    return np.linalg.norm(F - nearest_rotation(F), axis=(-2, -1))


def fit_coercivity(m, rng, n=1000, radius=0.1):
    """Smallest ratio ``W(F) / dist^2(F, SO(3))`` over random ``F`` near SO(3).

    Samples ``F = R (Id + P)`` with ``|P| <= radius`` and ``det F > 0``.
    """
    R = random_rotations(rng, n)
    P = rng.standard_normal((n, 3, 3))
    P *= (radius * rng.uniform(0.05, 1.0, n) / np.linalg.norm(P, axis=(1, 2)))[:, None, None]
    F = R @ (I3 + P)
    keep = np.linalg.det(F) > 0
    F = F[keep]
    d = dist_so3(F)
    ok = d > 1e-8
    return float(np.min(energy_density(m, F[ok]) / d[ok] ** 2)), F[ok]
