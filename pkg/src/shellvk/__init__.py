"""Thin-shell nonlinear elastodynamics and its dynamic von Karman limit.

Modules
-------
geometry    midsurface charts, curvature and the fixed-thickness shell mesh
material    St. Venant-Kirchhoff energy, stress, tangent and relaxed forms
solver3d    rescaled 3D elastodynamics with energy-consistent stepping
solver2d    limit von Karman shell system for (V, B)
reduction   convergence witnesses from 3D states and cross-h reports
harness     configuration, runs, sweeps and the self-test (CLI in ``cli``)
"""

__version__ = "0.1.0"
