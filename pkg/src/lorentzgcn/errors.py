"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes or lengths do not match the operation's contract."""


class DomainError(ValueError):
    """Input lies outside the mathematical domain (NaN, norm >= 1, t <= 0, ...)."""


class ContractViolation(RuntimeError):
    """An internal invariant failed; usually signals a bug upstream."""


class UnsupportedOpError(KeyError):
    """Unknown primitive id passed to the tape."""


class TapeStateError(RuntimeError):
    """Tape used out of order (e.g. backward twice for one forward)."""


class ConfigError(ValueError):
    """Invalid run or model configuration."""


class ParseError(ValueError):
    """Malformed dataset file; message carries the file and line number."""
