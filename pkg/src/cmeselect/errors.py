"""Exception types shared across the package."""


class CmeError(Exception):
    """Base class for all package-specific errors."""


class DesignError(CmeError):
    """Invalid main-effect input (wrong coding, too few columns, ...)."""


class DimensionError(CmeError):
    """Vector/matrix shapes do not line up."""


class StabilityError(CmeError):
    """A (gamma, tau, weight) configuration violates the convexity condition."""


class ConvergenceError(CmeError):
    """An iterative solve failed to converge or violated its descent guarantee."""


class DegenerateError(CmeError):
    """Input is degenerate (e.g. perfectly correlated latent model, single-class y)."""


class ScenarioError(CmeError):
    """A simulation scenario's active-effect constraints cannot be satisfied."""
