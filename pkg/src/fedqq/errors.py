"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the requested function."""


class CapacityError(ValueError):
    """An exact evaluation was requested beyond its enforced size cap."""


class NumericError(ArithmeticError):
    """A numerical routine failed to reach its requested tolerance."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class RankError(ValueError):
    """A regression design matrix does not have full column rank."""
