"""Exception types shared across the package."""


class OptArbError(Exception):
    """Base class for all package-specific errors."""


class DomainError(OptArbError, ValueError):
    """An input violates a documented model constraint."""


class SingularMatrix(OptArbError, ArithmeticError):
    """A diffusion or regression matrix is numerically singular."""


class BudgetExceeded(OptArbError, RuntimeError):
    """A simulation loop passed its configured step cap."""


class ConfigError(OptArbError, ValueError):
    """A run configuration file or value could not be used."""


class RegressionIllConditioned(OptArbError, ArithmeticError):
    """A least-squares basis is too ill-conditioned to trust."""


class NonMonotoneLadderWarning(UserWarning):
    """Penalized backward-solver values decreased along the lambda ladder."""
