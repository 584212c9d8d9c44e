"""Exception hierarchy.

Every error raised by this package derives from :class:`GapBridgeError`.
The CLI maps subtrees onto exit codes: validation-type failures exit 1,
file-format and I/O failures exit 2.
"""

from __future__ import annotations


class GapBridgeError(Exception):
    """Base class for all package errors."""


class ValidationError(GapBridgeError):
    """Invalid values: shape/dtype mismatches, NaN/Inf payloads, bad flags."""


class FormatError(GapBridgeError):
    """Unrecognized or unsupported file structure (magic, version, header)."""


class CorruptionError(GapBridgeError):
    """Structurally recognized file whose byte length or sections are wrong."""


class PairingError(ValidationError):
    """Image/text collections that cannot be aligned row-by-row."""


class DegenerateInputError(ValidationError):
    """Inputs outside an operation's domain, e.g. a zero-norm row."""


class InsufficientDataError(ValidationError):
    """Too few rows for the requested estimator."""


class NotPositiveDefiniteError(GapBridgeError):
    """Factorization failed even at the largest jitter rung."""

    def __init__(self, message: str, pivot_index: int | None = None):
        super().__init__(message)
        self.pivot_index = pivot_index


class TrainingDivergedError(GapBridgeError):
    """A training loop produced a non-finite loss or parameter."""


class UsageError(GapBridgeError):
    """Malformed command line: unknown flags, missing required arguments."""
