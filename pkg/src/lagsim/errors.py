"""Exception hierarchy shared across the toolkit."""

from __future__ import annotations


class LagsimError(Exception):
    """Base class for every error raised by lagsim."""


class ParseError(LagsimError, ValueError):
    """Malformed rule, machine or codebook text.

    ``line`` is 1-based and ``None`` when the error is not tied to a line.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class UndeclaredSymbol(ParseError):
    pass


class InsufficientTokens(LagsimError, ValueError):
    pass


class ForeignSymbol(LagsimError, ValueError):
    pass


class UnsupportedMachine(LagsimError, ValueError):
    pass


class CodebookInvalid(LagsimError, ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        msgs = "; ".join(v.message for v in self.violations[:5])
        super().__init__(f"codebook failed validation ({len(self.violations)} violations): {msgs}")


class ProtocolViolation(LagsimError):
    """A model response that does not follow the extended decoding protocol."""

    EMPTY_PRODUCTION = "EmptyProduction"
    NO_HALT = "NoHalt"
    PARSE_FAILURE = "ParseFailure"
    TRANSPORT = "Transport"

    def __init__(self, kind: str, context=None, outputs=None, detail: str = ""):
        self.kind = kind
        self.context = context
        self.outputs = outputs
        self.detail = detail
        super().__init__(f"{kind}: {detail}" if detail else kind)


class ContextTooLong(LagsimError, ValueError):
    pass


class TransportError(LagsimError):
    pass


class ProviderRefusal(LagsimError):
    def __init__(self, status: int, body: str = ""):
        self.status = status
        super().__init__(f"provider refused request with HTTP {status}: {body[:200]}")


class CacheCorruption(LagsimError):
    pass


class DimensionMismatch(LagsimError, ValueError):
    pass


class EmptyCodebook(LagsimError, ValueError):
    pass


class NonFiniteLoss(LagsimError, FloatingPointError):
    pass
