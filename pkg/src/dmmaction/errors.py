"""Exception types shared across the package."""


class DmmActionError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(DmmActionError):
    """A byte stream ended early or could not be decoded."""


class FormatError(DmmActionError):
    """A file or buffer violates its declared structure."""


class EmptyInputError(FormatError):
    """An input collection contained nothing to process."""


class ContractError(DmmActionError):
    """An operation was called with arguments violating its precondition."""


class ConfigError(DmmActionError):
    """A configuration value is invalid or inconsistent."""


class ProtocolError(DmmActionError):
    """A train/test split violates its evaluation protocol."""


class RankError(DmmActionError):
    """Input data is too degenerate for the requested decomposition."""


class StateError(DmmActionError):
    """An operation was invoked on an object in the wrong state."""
