"""Exception types shared across the package."""


class KContractError(Exception):
    """Base class for all errors raised by kcontract."""


class DimensionCapError(KContractError, ValueError):
    """A compound matrix would exceed the configured size cap."""


class IntegrationError(KContractError, RuntimeError):
    """Trajectory integration failed (step-size collapse or non-finite values).

    ``t`` and ``state`` hold the last accepted time and state, when known.
    """

    def __init__(self, message, t=None, state=None):
        super().__init__(message)
        self.t = t
        self.state = state
