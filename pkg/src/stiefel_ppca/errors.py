"""Exception and warning types raised across the package."""


class StiefelPPCAError(Exception):
    """Base class for all errors raised by this package."""


class NotPositiveDefinite(StiefelPPCAError, ValueError):
    """Cholesky pivot fell at or below the jitter floor."""

    def __init__(self, pivot_index, pivot_value=None):
        self.pivot_index = pivot_index
        self.pivot_value = pivot_value
        msg = f"matrix is not positive definite (pivot {pivot_index}"
        if pivot_value is not None:
            msg += f", value {pivot_value:.3e}"
        super().__init__(msg + ")")


class NoConvergence(StiefelPPCAError, RuntimeError):
    pass


class DegenerateVector(StiefelPPCAError, ValueError):
    """A Householder vector is too short to define a direction."""


class DegenerateSpectrum(StiefelPPCAError, ValueError):
    """Two singular values collide, so the log density is -inf."""


class Overflow(StiefelPPCAError, OverflowError):
    pass


class RankDeficient(StiefelPPCAError, ValueError):
    pass


class ZeroEigenvalue(StiefelPPCAError, ValueError):
    pass


class Divergence(StiefelPPCAError, RuntimeError):
    """Leapfrog energy error exceeded the divergence threshold."""

    def __init__(self, energy_error):
        self.energy_error = energy_error
        super().__init__(f"divergent trajectory (energy error {energy_error:.3g})")


class InitializationFailure(StiefelPPCAError, RuntimeError):
    pass


class ParseError(StiefelPPCAError, ValueError):
    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = ""
        if row is not None:
            where = f" (row {row}" + (f", column {column})" if column is not None else ")")
        super().__init__(message + where)


class ConstantColumn(StiefelPPCAError, ValueError):
    pass


class AmbiguousSignWarning(UserWarning):
    """First entry of a U column is too close to zero to fix its sign."""


class DegenerateChainWarning(UserWarning):
    """A chain has zero variance, so mixing diagnostics are undefined."""


class ChainsFailed(StiefelPPCAError, RuntimeError):
    """One or more chains of a multi-chain run raised.

    ``failures`` maps chain index to the exception; ``outputs`` holds the
    chains that finished (``None`` for failed ones).
    """

    def __init__(self, failures, outputs):
        self.failures = failures
        self.outputs = outputs
        detail = "; ".join(f"chain {i}: {exc}" for i, exc in sorted(failures.items()))
        super().__init__(f"{len(failures)} chain(s) failed: {detail}")
