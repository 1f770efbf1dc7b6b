"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: DataError -> 2,
PreconditionError -> 3, NumericError -> 4.
"""


class GridcastError(Exception):
    """Base class for all package errors."""


class DataError(GridcastError):
    """Input/output or configuration problem: missing files or columns,
    malformed CSV, bad config values, corrupt checkpoints."""


class PreconditionError(GridcastError):
    """A documented operation precondition is violated by otherwise
    well-formed inputs: ineligible forecast day, empty range, shape or
    fingerprint mismatch."""


class NumericError(GridcastError):
    """Numeric failure at runtime: training divergence, non-finite
    states or gradients."""
