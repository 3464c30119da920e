"""Engine error vocabulary.

Every error carries a stable ``code`` (its class name) so the HTTP layer,
the CLI, and tests share one vocabulary.
"""

from __future__ import annotations


class EngineError(Exception):
    """Base class for all engine errors."""

    def __init__(self, message: str = ""):
        super().__init__(message or self.__class__.__name__)
        self.message = message or self.__class__.__name__

    @property
    def code(self) -> str:
        return self.__class__.__name__


# -- session construction / configuration ------------------------------------

class EmptyTopic(EngineError):
    pass


class InvalidConfig(EngineError):
    pass


class ConfigError(EngineError):
    pass


# -- workflow stage machine ---------------------------------------------------

class IllegalTransition(EngineError):
    def __init__(self, current: str, target: str):
        super().__init__(f"no transition from {current} to {target}")
        self.current = current
        self.target = target


class GuardUnsatisfied(EngineError):
    def __init__(self, guard: str):
        super().__init__(f"guard not satisfied: {guard}")
        self.guard = guard


# -- prompt assembly and structured output -----------------------------------

class MissingBinding(EngineError):
    def __init__(self, name: str):
        super().__init__(f"missing binding: {name}")
        self.name = name


class UnknownBinding(EngineError):
    def __init__(self, name: str):
        super().__init__(f"unknown binding: {name}")
        self.name = name


class SchemaError(EngineError):
    """Structured output did not match its schema.

    ``kind`` is one of ``Unparseable``, ``MissingField``, ``ConstraintViolated``.
    """

    def __init__(self, kind: str, field: str = "", rule: str = ""):
        detail = kind
        if field:
            detail += f"({field}{': ' + rule if rule else ''})"
        super().__init__(detail)
        self.kind = kind
        self.field = field
        self.rule = rule


class StructuredOutputFailed(EngineError):
    def __init__(self, template: str, attempts: int, last: SchemaError | None = None):
        super().__init__(
            f"{template}: no schema-valid output after {attempts} attempt(s)"
            + (f" (last: {last.message})" if last else "")
        )
        self.template = template
        self.attempts = attempts
        self.last = last


# -- providers ----------------------------------------------------------------

class ProviderError(EngineError):
    """Base for transport-level provider failures.

    ``retryable`` marks whether the transport retry policy may re-issue the call.
    """

    retryable = True

    def __init__(self, message: str = "", detail: str = "", retryable: bool | None = None):
        super().__init__(message)
        self.detail = detail
        if retryable is not None:
            self.retryable = retryable


class ProviderUnavailable(ProviderError):
    pass


class Timeout(ProviderError):
    pass


class QuotaExceeded(ProviderError):
    retryable = False


class ScriptExhausted(ProviderError):
    retryable = False


class UnknownSession(EngineError):
    pass


# -- pipeline guards ----------------------------------------------------------

class SummaryAlreadyConfirmed(EngineError):
    pass


class NoSummary(EngineError):
    pass


class EmptyEvidence(EngineError):
    pass


class EmptyPool(EngineError):
    pass


class BlocksPending(EngineError):
    def __init__(self, block_id: str):
        super().__init__(f"block not enriched yet: {block_id}")
        self.block_id = block_id


class NotStale(EngineError):
    pass


class InitialGenerationFailed(EngineError):
    pass


# -- canvas commands ----------------------------------------------------------

class UnknownBlock(EngineError):
    pass


class UnknownMap(EngineError):
    pass


class EmptyBlockText(EngineError):
    pass


class ThemeMissing(EngineError):
    pass


class MapFinalized(EngineError):
    pass


class DraftStale(EngineError):
    pass


class NoPrototype(EngineError):
    pass


# -- store --------------------------------------------------------------------

class InvariantViolation(EngineError):
    pass


class IoFailure(EngineError):
    pass


class UnsupportedVersion(EngineError):
    pass


class CorruptEnvelope(EngineError):
    pass


class NotFinalized(EngineError):
    pass


# -- service / replay ---------------------------------------------------------

class TraceParseError(EngineError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class UnknownJob(EngineError):
    pass


class BindFailure(EngineError):
    pass
