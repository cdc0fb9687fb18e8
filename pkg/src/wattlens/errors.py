"""Exception hierarchy.

Two broad families matter for the CLI exit-code contract: ``InputError``
(bad data or configuration, exit 2) and ``NumericalError`` (a computation
went non-finite, exit 3). I/O failures use the builtin ``OSError`` (exit 4).
"""


class WattlensError(Exception):
    """Base class for all package-specific errors."""


class InputError(WattlensError):
    """Invalid input data, arguments, or configuration."""


class NumericalError(WattlensError):
    """A numeric computation produced a non-finite result."""


# --- ingestion -------------------------------------------------------------

class EmptyFileError(InputError):
    """CSV has no header or no data rows."""


class MissingColumnError(InputError):
    """A required column is absent from the header or matrix."""


class UnparsableValueError(InputError):
    """A cell could not be parsed as a finite number.

    ``row`` is the 1-based data-row index (header excluded), ``column``
    the offending column name.
    """

    def __init__(self, row: int, column: str, detail: str = ""):
        self.row = row
        self.column = column
        msg = f"unparsable value at row {row}, column {column!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class DuplicateTimestampError(InputError):
    """Two rows share the same timestamp."""


# --- feature selection / windowing ------------------------------------------

class ConstantInputError(InputError):
    """A correlation argument has zero variance."""


class UnknownTargetError(InputError):
    """The correlation target feature does not exist."""


class KTooLargeError(InputError):
    """Requested more ranked features than are available."""


class WindowTooLongError(InputError):
    """Window length exceeds the number of rows."""


# --- numeric kernel ----------------------------------------------------------

class ShapeMismatchError(InputError):
    """Array shapes are incompatible with the operation."""


class StaleCacheError(InputError):
    """A backward pass received a cache from a different forward call."""


class NonFiniteGradientError(NumericalError):
    """An optimizer step received NaN or infinite gradients."""


class DivergedLossError(NumericalError):
    """A training epoch produced a non-finite loss."""


# --- pairing / detection -----------------------------------------------------

class NotEnoughWindowsError(InputError):
    """Too few windows to build any pair under the policy."""


class NoNegativesAvailableError(InputError):
    """No window pair is far enough apart to serve as a dissimilar pair."""


class EmptyReferenceError(InputError):
    """Anomaly scoring needs at least one reference embedding."""


# --- baselines ---------------------------------------------------------------

class TooFewPointsError(InputError):
    """Fewer points than the operation requires."""


class ZeroVarianceError(InputError):
    """Skewness is undefined for zero-variance data."""


class DimMismatchError(InputError):
    """Point dimensionality differs from the fitted model."""


# --- benchmark harness -------------------------------------------------------

class OverlappingInjectionsError(InputError):
    """Synthetic anomaly injections overlap or leave the series bounds."""


class LengthMismatchError(InputError):
    """Flag and truth vectors have different lengths."""
