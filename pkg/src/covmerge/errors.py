"""Exception hierarchy.

Everything the library raises on purpose derives from CovmergeError so the
CLI (and library callers) can separate domain failures from bugs.
"""


class CovmergeError(Exception):
    """Base class for all covmerge errors."""


class MatrixFormatError(CovmergeError):
    """Malformed input file; remembers where parsing failed."""

    def __init__(self, message, path=None, line=None, column=None):
        loc = []
        if path is not None:
            loc.append(str(path))
        if line is not None:
            loc.append(f"line {line}")
        if column is not None:
            loc.append(f"column {column}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.path = path
        self.line = line
        self.column = column


class EmptySampleSet(CovmergeError):
    """No partial samples were supplied."""


class DuplicateLabel(CovmergeError):
    """A label occurs more than once where uniqueness is required."""


class UnknownLabel(CovmergeError):
    """A requested label is absent from the reference label set."""


class NonPositiveDiagonal(CovmergeError):
    """Correlation conversion needs strictly positive diagonal entries."""


class SingularSubmatrix(CovmergeError):
    """An observed-block submatrix could not be factorized."""


class NotPositiveDefinite(CovmergeError):
    """A positive-definite matrix was required."""


class MonomorphicPanel(CovmergeError):
    """All markers are monomorphic; the scaling constant is zero."""


class MissingDosages(CovmergeError):
    """Operation requires a complete dosage matrix."""


class DegenerateCovariance(CovmergeError):
    """Genotype covariance has (near-)zero mean diagonal."""


class NonzeroDiagonal(CovmergeError):
    """A squared-distance matrix must have a zero diagonal."""


class NegativeBandwidth(CovmergeError):
    """Kernel bandwidth must be strictly positive."""


class LabelMismatch(CovmergeError):
    """Labels do not line up between two inputs."""


class DegenerateDesign(CovmergeError):
    """Fixed-effect design matrix is rank deficient."""


class EmptyRowOrColumn(CovmergeError):
    """An incomplete matrix has a row or column without observations."""


class SingularInformation(CovmergeError):
    """The information matrix is singular; standard errors are undefined."""


class DimensionGuardExceeded(CovmergeError):
    """Problem size exceeds the guard for a dense quadratic-size computation."""


class EmptyGroup(CovmergeError):
    """A cross-validation split left a group or the training side empty."""
