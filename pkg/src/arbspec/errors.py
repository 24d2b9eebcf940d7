"""Exception hierarchy shared by all modules."""


class ArbspecError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(ArbspecError, ValueError):
    """Input violates a documented precondition."""


class InvalidPathsError(ArbspecError):
    """Too many simulated paths were flagged invalid."""

    def __init__(self, n_invalid, n_paths, limit):
        self.n_invalid = n_invalid
        self.n_paths = n_paths
        self.limit = limit
        super().__init__(
            f"{n_invalid} of {n_paths} paths invalid (limit {limit:.2%})"
        )


class StructuralModelError(ArbspecError):
    """Model has no closed-form characteristics."""


class ChainViolation(ArbspecError):
    """Verdicts contradict the implication chain NFLVR => NA1 => NSA => NIP."""
