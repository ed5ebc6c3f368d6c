"""Exception hierarchy.

Errors split into two families so the command line can map them to exit
codes: :class:`InputError` (bad files, bad configuration; exit 2) and
:class:`NumericalError` (rank loss, overflow, failed fits; exit 1).
"""


class FpcaError(Exception):
    """Base class for every error raised by this package."""


class InputError(FpcaError, ValueError):
    """Malformed input data or invalid configuration."""


class NumericalError(FpcaError, ArithmeticError):
    """A numerical routine could not produce a finite, valid result."""


class RankDeficiencyError(NumericalError):
    """Weighted Gram-Schmidt met a (numerically) dependent column.

    Attributes
    ----------
    column : int
        Zero-based index of the offending column.
    """

    def __init__(self, column, ratio):
        self.column = column
        self.ratio = ratio
        super().__init__(
            f"column {column} is linearly dependent on the preceding columns "
            f"(residual/input weighted norm = {ratio:.3e})"
        )


class FitFailedError(NumericalError):
    """No restart of a fit produced a finite objective."""
