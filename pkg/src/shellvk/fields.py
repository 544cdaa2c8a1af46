"""Analytic chart fields used as forcing profiles and initial data.

A chart field maps surface points to ambient 3-vectors and reports its
parameter derivatives, so that Kirchhoff-type lifts (which need the normal
rotation ``-(grad W)^T n``) can be formed without numerical differentiation.
"""

from dataclasses import dataclass

import numpy as np


def _unit(chart, xi):
    (a1, b1), (a2, b2) = chart.bounds
    return (xi[:, 0] - a1) / (b1 - a1), (xi[:, 1] - a2) / (b2 - a2), 1 / (b1 - a1), 1 / (b2 - a2)


def _scalar_profile(name, chart, xi):
    """Scalar profile on the unit square and its parameter derivatives."""
    u, v, c1, c2 = _unit(chart, xi)
    pi = np.pi
    if name == "sine":
        f = np.sin(pi * u) * np.sin(pi * v)
        fu = pi * np.cos(pi * u) * np.sin(pi * v)
        fv = pi * np.sin(pi * u) * np.cos(pi * v)
    elif name == "bubble":
        # clamped: value and gradient vanish on the boundary
        su, sv = np.sin(pi * u), np.sin(pi * v)
        f = su**2 * sv**2
        fu = 2 * pi * su * np.cos(pi * u) * sv**2
        fv = 2 * pi * sv * np.cos(pi * v) * su**2
    elif name == "antisym":
        su, sv = np.sin(2 * pi * u), np.sin(pi * v)
        f = su * sv**2 * np.sin(pi * u)
        fu = (2 * pi * np.cos(2 * pi * u) * np.sin(pi * u) + pi * su * np.cos(pi * u)) * sv**2
        fv = su * np.sin(pi * u) * 2 * pi * sv * np.cos(pi * v)
    elif name == "bubble2":
        su, sv = np.sin(pi * u), np.sin(2 * pi * v)
        f = su**2 * sv**2
        fu = 2 * pi * su * np.cos(pi * u) * sv**2
        fv = 4 * pi * sv * np.cos(2 * pi * v) * su**2
    else:
        raise ValueError(f"unknown profile {name!r}")
    return f, np.stack([fu * c1, fv * c2], axis=1)


PROFILES = ("sine", "bubble", "antisym", "bubble2")


@dataclass(frozen=True)
class NormalProfile:
    """``amplitude * phi(xi) * n(xi)`` for a named scalar profile ``phi``."""

    name: str
    amplitude: float = 1.0

    def evaluate(self, geo, chart):
        f, df = _scalar_profile(self.name, chart, geo.xi)
        val = self.amplitude * f[:, None] * geo.n
        grad = self.amplitude * (df[:, None, :] * geo.n[:, :, None] + f[:, None, None] * geo.dn)
        return val, grad

    def __call__(self, t, geo, chart):
        return self.evaluate(geo, chart)[0]


@dataclass(frozen=True)
class VectorProfile:
    """``amplitude * phi(xi) * direction`` with a fixed ambient direction."""

    name: str
    direction: tuple = (0.0, 0.0, 1.0)
    amplitude: float = 1.0

    def evaluate(self, geo, chart):
        f, df = _scalar_profile(self.name, chart, geo.xi)
        d = np.asarray(self.direction, float)
        return self.amplitude * f[:, None] * d, self.amplitude * d[None, :, None] * df[:, None, :]

    def __call__(self, t, geo, chart):
        return self.evaluate(geo, chart)[0]


@dataclass(frozen=True)
class TimeModulated:
    """Time-dependent forcing ``g(t) * profile`` with ``g`` constant or cosine."""

    profile: object
    temporal: str = "constant"
    omega: float = 0.0

    def scale(self, t):
        if self.temporal == "constant":
            return 1.0
        if self.temporal == "cos":
            return float(np.cos(self.omega * t))
        if self.temporal == "sin":
            return float(np.sin(self.omega * t))
        raise ValueError(f"unknown temporal law {self.temporal!r}")

    def __call__(self, t, geo, chart):
        return self.scale(t) * self.profile(t, geo, chart)
