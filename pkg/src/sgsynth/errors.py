"""Exception hierarchy shared across the package.

Exit codes follow the CLI contract: 0 success, 2 parameter error,
3 ingestion error, 4 protocol error.
"""


class SgsynthError(Exception):
    """Base class; carries the process exit code for the CLI."""

    exit_code = 1


class ParameterError(SgsynthError):
    """Invalid configuration value or out-of-range argument."""

    exit_code = 2


class EncodingRangeError(ParameterError):
    """Real value outside the representable fixed-point range."""


class IngestionError(SgsynthError):
    """Malformed or inconsistent input data."""

    exit_code = 3


class ProtocolError(SgsynthError):
    """Failure inside a multi-party protocol run."""

    exit_code = 4


class TransportError(ProtocolError):
    """Peer unreachable, disconnected, or timed out."""


class DesyncError(ProtocolError):
    """Round tag mismatch between peers."""


class IntegrityError(ProtocolError):
    """Overlapping share copies disagree at reconstruction."""


class HarnessError(ProtocolError):
    """Local three-party harness failed to complete (e.g. deadlock)."""
