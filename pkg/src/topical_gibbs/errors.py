"""Exception hierarchy shared across the package.

CLI exit codes: ConfigError -> 1, DataError -> 2, NumericalError -> 3.
"""


class TopicalGibbsError(Exception):
    """Base class for all package errors."""


class ConfigError(TopicalGibbsError):
    """Invalid configuration (bad key, out-of-domain value, inconsistent dims)."""


class DataError(TopicalGibbsError):
    """Malformed or inconsistent input data."""

    def __init__(self, message, line=None, path=None):
        if path is not None and line is not None:
            message = f"{path}:{line}: {message}"
        elif line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
        self.path = path


class DomainError(TopicalGibbsError, ValueError):
    """Parameter outside a sampler's or statistic's domain."""


class NumericalError(TopicalGibbsError):
    """Numerical failure (non-PD factorization, singular system, overflow)."""

    def __init__(self, message, pivot=None, rank=None):
        super().__init__(message)
        self.pivot = pivot
        self.rank = rank


class FitAborted(TopicalGibbsError):
    """A Gibbs block failed mid-fit; carries the iteration and checkpoint path."""

    def __init__(self, iteration, checkpoint_path, cause):
        super().__init__(
            f"fit aborted at iteration {iteration} "
            f"(checkpoint: {checkpoint_path}): {cause}"
        )
        self.iteration = iteration
        self.checkpoint_path = checkpoint_path
        self.cause = cause
