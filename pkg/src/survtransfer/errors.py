"""Exception types shared across the package.

The CLI maps these onto exit codes: usage errors -> 1, DataError -> 2,
NumericError -> 3.
"""


class DataError(ValueError):
    """Malformed or inconsistent input data (files, tables, covariate names)."""


class NumericError(RuntimeError):
    """Numerical failure: divergence, singular systems, undefined metrics."""


class SingularRiskError(NumericError):
    """A jump update hit a zero risk sum with a positive numerator."""


class MetricUndefinedError(NumericError):
    """A metric has no defined value on the given data (e.g. no comparable pairs)."""
