"""Exception types shared across the toolkit."""


class DataError(ValueError):
    """Invalid data or contract violation (bad manifest, shape mismatch, ...)."""


class FormatError(DataError):
    """Malformed serialized payload (bad magic, truncation, ragged CSV, ...)."""
