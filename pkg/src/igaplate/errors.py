"""Exception types shared across the package."""


class IgaplateError(Exception):
    """Base class; carries a machine-readable ``category`` for the CLI."""

    category = "internal"


class ModelError(IgaplateError):
    """Invalid model/config input (bad knots, missing patches, ...)."""

    def __init__(self, message, category="model"):
        super().__init__(message)
        self.category = category


class GeometryError(IgaplateError):
    """Degenerate or inconsistent geometry (singular Jacobian, gaps,
    misoriented normals, failed point inversion)."""

    category = "model:geometry"


class InterfaceError(IgaplateError):
    """Degenerate coupling interface (e.g. singular reduced mass matrix)."""

    category = "model:interface"


class SolverError(IgaplateError):
    """Linear solver failure, tagged with the nested layer it occurred in."""

    def __init__(self, message, layer="outer"):
        super().__init__(message)
        self.layer = layer
        self.category = "solver:" + layer
