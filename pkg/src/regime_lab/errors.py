"""Exception taxonomy shared across the package.

The CLI maps these onto distinct exit codes: configuration problems,
data/ingestion problems, and runtime failures.
"""


class RegimeLabError(Exception):
    """Base class for all package errors."""


class ConfigError(RegimeLabError):
    """Invalid or unknown configuration (bad key, bad type, bad value)."""


class DataError(RegimeLabError):
    """Input data failed validation (CSV schema, panel invariants)."""


class ShapeError(RegimeLabError, ValueError):
    """Array dimensions do not line up; message names both shapes."""


class StateError(RegimeLabError, RuntimeError):
    """Operation called out of order, e.g. backward without a forward."""


class DegenerateBatchError(RegimeLabError, ValueError):
    """Batch statistics undefined (fewer than 2 rows in training mode)."""


class DegenerateCrossSectionError(RegimeLabError, ValueError):
    """Cross-sectional statistic undefined (fewer than 2 tickers on a date)."""


class PortfolioError(RegimeLabError, ValueError):
    """Portfolio cannot be formed from the scored universe."""


class UndefinedMetricError(RegimeLabError, ValueError):
    """Metric undefined for the given series (e.g. zero-variance Sharpe)."""
