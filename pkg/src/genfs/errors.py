"""Exception types shared across the package."""


class GenFSError(Exception):
    pass


class ConfigError(GenFSError, ValueError):
    """Invalid configuration value (non-positive rates, K > N, ...)."""


class ContractError(GenFSError, ValueError):
    """A call violated an operation's precondition."""


class DimensionError(ContractError):
    pass


class StateError(GenFSError, RuntimeError):
    """Object used before it was fitted / loaded."""


class FormatError(GenFSError, ValueError):
    """Malformed file: dataset line, checkpoint header, tokenizer model."""
