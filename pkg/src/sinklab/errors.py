"""Exception hierarchy shared by every sinklab module."""


class SinkLabError(Exception):
    """Base class for all toolkit errors."""


class DomainError(SinkLabError, ValueError):
    """An argument lies outside the operation's domain."""


class ShapeError(SinkLabError, ValueError):
    pass


class ContractError(SinkLabError, ValueError):
    """An input violates a documented structural precondition."""


class ConfigError(SinkLabError, ValueError):
    pass


class DegenerateInputError(SinkLabError, ValueError):
    pass


class PairingError(SinkLabError):
    """Two score vectors do not share the same (prompt, seed) pairing."""


class SanityGateError(SinkLabError):
    """The no-op processor changed the output of a generation."""


class VerificationGateError(SinkLabError):
    """A full-ablation condition failed to remove its targets."""
