"""Exception types shared across the toolkit."""


class DegenerateGeometryError(ValueError):
    """A hidden-scene point coincides with a scan point (zero path length)."""


class OutOfExtentError(ValueError):
    """A requested wall position falls outside the scanned area."""


class ConfigurationError(ValueError):
    """Inconsistent or unsupported parameter combination."""


class FormatError(ValueError):
    """A file does not conform to its declared binary format."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""
