"""Exception types shared across the package."""


class SingularityError(ValueError):
    """A point coincides with the singularity at 0."""


class DomainError(ValueError):
    """A point lies outside I = [-1/2, 1/2] or outside a required subdomain."""


class NoPreimageError(ValueError):
    """A value is not in the image of the requested branch."""


class ConfigError(ValueError):
    """Invalid parameters or configuration."""


class WindowError(IndexError):
    """An operation needs parameter values outside the stored omega window."""

    def __init__(self, needed, available):
        self.needed = needed
        self.available = available
        super().__init__(
            f"omega window {available} does not cover required indices {needed}")


class SingularOrbitError(ArithmeticError):
    """An orbit landed on the singularity."""

    def __init__(self, time, x=None):
        self.time = time
        self.x = x
        super().__init__(f"orbit hits the singularity at step {time}")
