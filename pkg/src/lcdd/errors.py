"""Exception types raised across the package."""


class ContractError(ValueError):
    """Input violates a documented precondition (shape, finiteness, range)."""


class DatasetError(ValueError):
    """Empty or otherwise unusable material dataset."""


class DatasetParseError(DatasetError):
    """Malformed dataset file; ``line`` is the 1-based offending line."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NNLSConvergenceError(RuntimeError):
    """Active-set iteration exceeded its safety cap."""


class CoverageError(ValueError):
    """Evaluation point not covered by enough kernel supports."""


class UnsupportedDomainError(ValueError):
    """Node layout is not a full regular rectangular lattice."""


class GeometryError(ValueError):
    """Invalid structural geometry (zero-length member, dangling node)."""


class SingularSystemError(RuntimeError):
    """Global stiffness is singular after boundary conditions.

    ``null_vector`` holds the (reduced) eigenvector of the smallest
    eigenvalue, which usually points straight at the unrestrained mode.
    """

    def __init__(self, message, null_vector=None, min_eigenvalue=None):
        self.null_vector = null_vector
        self.min_eigenvalue = min_eigenvalue
        super().__init__(message)
