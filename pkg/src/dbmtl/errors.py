"""Exception hierarchy shared by every module."""


class DBMTLError(Exception):
    """Base class for all package errors."""


class ConfigurationError(DBMTLError, ValueError):
    """A configuration value is invalid or inconsistent."""


class ContractError(DBMTLError, ValueError):
    """A function was called with arguments that violate its contract."""


class StructureError(DBMTLError, ValueError):
    """A Bayesian structure is cyclic or references unknown targets."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class DataError(DBMTLError, ValueError):
    """A dataset is malformed; ``row`` is the 1-based data row when known."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class TrainingError(DBMTLError, RuntimeError):
    """Training diverged (non-finite loss)."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class BudgetError(DBMTLError, ValueError):
    """A request exceeds what the exhaustive routines are allowed to do."""


class ComparisonError(DBMTLError, ValueError):
    """Runs that cannot be compared (different datasets) were combined."""
