"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: DataError and its subclasses mean bad
input data (exit 1); everything argparse-shaped is a usage error (exit 2).
"""
from __future__ import annotations


class AllabelError(Exception):
    """Base class for all package errors."""


class DataError(AllabelError):
    """Malformed or inconsistent input data."""


class SchemaError(DataError):
    """Entity type or attribute not covered by the dataset schema."""


class SelectionError(AllabelError):
    """Selection preconditions violated (budget, matrix shape, stage state)."""


class AnnotatorError(AllabelError):
    """Annotation backend failure after retries were exhausted."""


class CapabilityError(AnnotatorError):
    """Backend lacks a required capability, e.g. token log-probabilities."""


class OutputParseError(DataError):
    """Model output did not contain a usable annotation payload."""
