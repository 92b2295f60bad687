"""Exception hierarchy shared by all modules."""


class TarmaTestError(Exception):
    """Base class for package errors."""


class ValidationError(TarmaTestError, ValueError):
    """A model specification or input violates its constraints."""


class EstimationError(TarmaTestError):
    """ARMA estimation could not be carried out (e.g. degenerate series)."""


class SingularityError(TarmaTestError):
    """Every candidate threshold produced an ill-conditioned information block."""


class PreconditionError(TarmaTestError):
    """An operation was called with inputs that violate its precondition."""


class TableError(TarmaTestError):
    """Quantile table lookup, schema or tabulation failure."""


class TableMismatchError(TableError):
    """The table does not match the statistic it is applied to."""


class ChecksumError(TableError):
    """A persisted table is truncated or corrupted."""


class TabulationError(TableError):
    """Too many replicates had to be redrawn during tabulation."""


class ResumeMismatchError(TarmaTestError):
    """An existing experiment report was produced with a different seed/config."""
