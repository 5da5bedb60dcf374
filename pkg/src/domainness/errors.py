"""Exception hierarchy shared across the pipeline."""


class DomainnessError(Exception):
    """Base class for all errors raised by this package."""


class DataError(DomainnessError):
    """Bad input data: files, formats, manifests, dimension mismatches."""


class ProtocolError(DomainnessError):
    """Subprocess extractor misbehaved (handshake, framing, dimensions)."""
