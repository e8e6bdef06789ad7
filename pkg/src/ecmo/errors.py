"""Exception types shared across the package."""


class EcmoError(Exception):
    """Base class; ``category`` is the machine-parsable tag the CLI prints."""

    category = "error"


class DimensionError(EcmoError, ValueError):
    category = "dimension"


class EmptySequenceError(EcmoError, ValueError):
    category = "empty-sequence"


class ContractError(EcmoError, ValueError):
    category = "contract"


class FormatError(EcmoError, ValueError):
    category = "format"


class CompatibilityError(EcmoError, ValueError):
    category = "compatibility"


class AlignmentError(EcmoError, ValueError):
    category = "alignment"


class ProtocolError(EcmoError, ValueError):
    category = "protocol"


class TokenIndexError(EcmoError, IndexError):
    category = "index"
