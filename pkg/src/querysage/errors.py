"""Exception types shared across the package.

Every failure mode the engine can surface deliberately maps to one of
these classes so callers (and the CLI exit-code mapping) can tell user
mistakes, data problems, and numerical degeneracy apart.
"""

from __future__ import annotations


class QuerySageError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(QuerySageError):
    """A configuration value is out of its documented range."""


class DataError(QuerySageError):
    """Input data is malformed: bad CSV, schema mismatch, empty relation."""


class SchemaError(DataError):
    """Schema definition violates its invariants."""


class ParseError(QuerySageError):
    """The SQL text is lexically or syntactically invalid.

    Distinct from UnsupportedQueryError: a ParseError means the text is
    not a query at all, not that it falls outside the supported subset.
    """


class UnsupportedQueryError(QuerySageError):
    """A well-formed query outside the supported subset."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class EmptySelectionError(QuerySageError):
    """AVG over a selection with fewer than two matching rows."""


class DegenerateSynopsisError(QuerySageError):
    """The covariance matrix stayed singular after jitter escalation."""


class UntrainedError(QuerySageError):
    """Inference was requested but no trained model is available."""


class AppendError(QuerySageError):
    """Append bookkeeping violation (double adjustment, version skew)."""


class LearnError(QuerySageError):
    """Parameter fitting could not start (NaN objective, bad config)."""
