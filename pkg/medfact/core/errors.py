"""Exception types shared across the toolkit."""

from __future__ import annotations

from typing import Optional


class MedFactError(RuntimeError):
    """Base class for every error raised by medfact."""


# --- verifier output -------------------------------------------------------


class ParseError(MedFactError):
    """Verifier output could not be turned into a report."""


class FormatError(ParseError):
    """Blocks are missing, duplicated, mis-ordered or followed by extra text."""


class ScoreError(ParseError):
    """Score block does not hold an integer in -2..2."""


# --- chat gateway ----------------------------------------------------------


class GatewayError(MedFactError):
    """A chat-completion call failed."""

    retryable = False


class TransportError(GatewayError):
    """Network failure or unexpected HTTP status."""

    def __init__(self, message: str, *, retryable: bool = True, status: Optional[int] = None):
        super().__init__(message)
        self.retryable = retryable
        self.status = status


class AuthError(GatewayError):
    """Credentials were rejected (401/403)."""


class RateLimitError(GatewayError):
    """Backend kept answering 429."""

    retryable = True


class EmptyResponse(GatewayError):
    """Backend answered without message content."""


# --- inputs ----------------------------------------------------------------


class InputError(MedFactError):
    """An input file or record is unusable."""


class IoError(InputError):
    """File could not be read or written."""


class SchemaError(InputError):
    """Record is missing required keys or violates a uniqueness rule."""


class BiocSchemaError(SchemaError):
    """BioC document does not have the expected structure."""


class LengthMismatch(InputError):
    """Line-aligned files have different lengths."""


class StageInputMissing(InputError):
    """A pipeline stage cannot find the file it consumes."""

    def __init__(self, stage: str, detail: str = ""):
        message = f"stage '{stage}' is missing its input"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)
        self.stage = stage


class ConfigError(MedFactError):
    """Pipeline configuration is invalid; `field` names the offending setting."""

    def __init__(self, field: str, message: str = "invalid value"):
        super().__init__(f"{field}: {message}")
        self.field = field


# --- domain operations -----------------------------------------------------


class DomainError(MedFactError):
    """An operation was called outside its domain."""


class EmptyClaim(DomainError):
    pass


class EmptyText(DomainError):
    pass


class DimMismatch(DomainError):
    pass


class EmptyList(DomainError):
    pass


class EmptySet(DomainError):
    pass


class EmptySample(DomainError):
    pass


class UnknownAnswer(DomainError):
    pass


class UnparseableAnswer(DomainError):
    pass


class NoIdentifier(DomainError):
    pass


class JsonError(DomainError):
    pass


class ServiceError(DomainError):
    """Bibliographic lookup service failed."""
