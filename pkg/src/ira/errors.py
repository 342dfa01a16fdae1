"""Exception hierarchy shared across the package."""

from __future__ import annotations


class IraError(Exception):
    """Base class for all errors raised by this package."""


# --- dataset ingestion -------------------------------------------------


class MissingFile(IraError):
    pass


class MalformedRecord(IraError):
    """A dataset record that cannot be parsed. Carries the question id when known."""

    def __init__(self, question_id: str | None, reason: str):
        self.question_id = question_id
        self.reason = reason
        super().__init__(f"malformed record (question_id={question_id!r}): {reason}")


class AnnotationMismatch(IraError):
    pass


class WrongAnnotationCount(IraError):
    pass


# --- model gateway ------------------------------------------------------


class GatewayError(IraError):
    pass


class Timeout(GatewayError):
    pass


class ServiceError(GatewayError):
    def __init__(self, status: int, body: str):
        self.status = status
        self.body = body
        super().__init__(f"service returned HTTP {status}: {body[:200]}")


class RetriesExhausted(GatewayError):
    pass


class UnreadableImage(GatewayError):
    pass


class DimensionMismatch(IraError):
    pass


# --- inquiry ------------------------------------------------------------


class MissingCaption(IraError):
    pass


class NoQuestionsFound(IraError):
    pass


# --- refinement ---------------------------------------------------------


class NonFiniteLoss(IraError):
    pass


# --- answering ----------------------------------------------------------


class PoolTooSmall(IraError):
    pass


class MissingField(IraError):
    def __init__(self, variant: str, field: str):
        self.variant = variant
        self.field = field
        super().__init__(f"variant {variant!r} requires field {field!r}")


class EmptyCompletion(IraError):
    pass


# --- pipeline -----------------------------------------------------------


class MissingArtifact(IraError):
    def __init__(self, stage: str):
        self.stage = stage
        super().__init__(f"artifact produced by stage {stage!r} not found; run that stage first")


class ConfigInvalid(IraError):
    def __init__(self, field: str, reason: str):
        self.field = field
        self.reason = reason
        super().__init__(f"invalid config field {field!r}: {reason}")
