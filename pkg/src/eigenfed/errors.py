"""Exception types shared across the package."""

from __future__ import annotations


class EigenfedError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(EigenfedError):
    """Operands have incompatible shapes for the requested operation."""


class RankDeficient(EigenfedError):
    """A matrix expected to have full column rank does not.

    Carries the observed numerical rank.
    """

    def __init__(self, observed_rank: int, message: str | None = None):
        self.observed_rank = int(observed_rank)
        super().__init__(message or f"numerical rank {observed_rank} below requested")


class NotSymmetric(EigenfedError):
    """A matrix required to be symmetric is not, beyond tolerance."""


class NotOrthonormal(EigenfedError):
    """A matrix required to have orthonormal columns does not, beyond tolerance."""


class NotPSD(EigenfedError):
    """A matrix required to be positive semidefinite has a clearly negative eigenvalue."""


class ZeroMatrix(EigenfedError):
    """An all-zero matrix where a nonzero one is required."""


class InvalidModelParams(EigenfedError):
    """Synthetic-model parameters violate their admissible domain."""


class MissingBound(EigenfedError):
    """A bound formula needs a parameter (such as the sample radius) that was not supplied."""


class WorkerTimeout(EigenfedError):
    """A worker failed to deliver its message before the deadline."""

    def __init__(self, node_id: int, message: str | None = None):
        self.node_id = int(node_id)
        super().__init__(message or f"worker {node_id} timed out")


class WorkerFailed(EigenfedError):
    """A worker signalled an error instead of a payload."""

    def __init__(self, node_id: int, message: str | None = None):
        self.node_id = int(node_id)
        super().__init__(message or f"worker {node_id} reported failure")


class PayloadValidation(EigenfedError):
    """A received payload failed coordinator-side validation."""

    def __init__(self, node_id: int, message: str | None = None):
        self.node_id = int(node_id)
        super().__init__(message or f"payload from worker {node_id} failed validation")


class VersionMismatch(EigenfedError):
    """A frame declared a protocol version this build does not speak."""


class MalformedFrame(EigenfedError):
    """Bytes on the wire do not parse as a frame."""

    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)


class ConfigError(EigenfedError):
    """An experiment configuration is missing, malformed, or inconsistent.

    Carries the offending key where one can be named.
    """

    def __init__(self, key: str, reason: str):
        self.key = key
        self.reason = reason
        super().__init__(f"config key '{key}': {reason}")
