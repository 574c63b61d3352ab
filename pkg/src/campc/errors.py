"""Exception types shared across the package."""


class CampcError(Exception):
    """Base class for errors raised by this package."""


class NotPositiveDefiniteError(CampcError, ValueError):
    """A matrix required to be positive definite is not."""


class InfeasibleError(CampcError, RuntimeError):
    """An optimization problem or controller step has no feasible point."""


class ScenarioError(CampcError, ValueError):
    """A scenario description violates the schema or a physical invariant."""


class NumericalError(CampcError, RuntimeError):
    """A numerical routine failed to reach its required accuracy."""
