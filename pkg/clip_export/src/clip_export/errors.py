"""Error hierarchy for the exporter.

Exit codes follow the same convention as the downstream toolkit: 0 for
success, 1 for usage or configuration errors, 2 for anything wrong with
an input file or directory.
"""


class ExportError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 1


class UsageError(ExportError):
    """Bad flags or an invalid job configuration."""

    exit_code = 1


class EncoderLoadError(ExportError):
    """Unknown model identifier, or a checkpoint that cannot be loaded."""

    exit_code = 1


class InputError(ExportError):
    """The input file or directory cannot be used as-is."""

    exit_code = 2
