"""Exception hierarchy shared by all modules."""


class ShellVKError(Exception):
    """Base class for package errors."""


class DomainError(ShellVKError, ValueError):
    """A chart parameter lies outside the parameter rectangle."""


class GeometryError(ShellVKError, ValueError):
    """The shell thickness is too large for the surface curvature."""


class StateError(ShellVKError, ValueError):
    """A state violates its boundary constraints or admissibility."""


class InputError(ShellVKError, ValueError):
    """Invalid user-supplied data (fields, time grids, ...)."""


class ConfigError(ShellVKError, ValueError):
    """Invalid experiment configuration."""


class SolverError(ShellVKError, RuntimeError):
    """Nonlinear or time-stepping failure.

    ``diagnostics`` holds whatever the solver knew when it gave up.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class DiscretizationError(ShellVKError, RuntimeError):
    """A discrete system turned out singular or inconsistent."""


class DiagnosticsError(ShellVKError, RuntimeError):
    """A diagnostic could not be evaluated (e.g. rank-deficient gradient)."""
