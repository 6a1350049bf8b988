"""Exception types shared across the toolkit."""


class FlashgateError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(FlashgateError, ValueError):
    """An argument violates a documented precondition."""


class DegenerateVectorError(InvalidInputError):
    """A vector is too close to zero norm to define a direction."""


class TraceParseError(FlashgateError, ValueError):
    """A trace file violates the JSONL schema; the message names the 1-based line."""


class TensorFormatError(FlashgateError, ValueError):
    """A tensor file violates the binary format."""
