"""Exception types shared across the package."""


class ConvergenceError(RuntimeError):
    """An iterative solver ran out of sweeps."""


class FormatError(ValueError):
    """A binary or JSON artifact does not match its declared layout."""
