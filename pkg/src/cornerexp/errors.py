"""Exception types shared across the library."""


class CornerExpError(Exception):
    """Base class for all library errors."""


class InvalidParams(CornerExpError):
    pass


class NonConvergence(CornerExpError):
    pass


class DivergentIntegral(CornerExpError):
    pass


class IllConditioned(CornerExpError):
    pass


class RootScanExhausted(CornerExpError):
    pass


class NotAtRoot(CornerExpError):
    pass


class ObstructedRHS(CornerExpError):
    """Right-hand side not orthogonal to the kernel at an indicial root.

    Carries the offending projection value.
    """

    def __init__(self, projection, message=None):
        self.projection = projection
        super().__init__(message or f"RHS has kernel component {projection!r}")


class RankMismatch(CornerExpError):
    pass


class SingularLeadingTerm(CornerExpError):
    pass


class NegativePowerProduced(CornerExpError):
    pass


class TruncationInsufficient(CornerExpError):
    pass


class LambdaOutOfRange(CornerExpError):
    pass


class NonTransverse(CornerExpError):
    pass


class NotHalfPi(CornerExpError):
    pass


class IndicialRootHit(CornerExpError):
    def __init__(self, gamma, nu_root, message=None):
        self.gamma = gamma
        self.nu_root = nu_root
        super().__init__(
            message
            or f"expansion order {gamma} collides with spectral parameter {nu_root}"
        )


class Obstructed(CornerExpError):
    """Order-n solve blocked; carries the obstruction tensor."""

    def __init__(self, obstruction, message=None):
        self.obstruction = obstruction
        super().__init__(message or "order-n tracefree equation is obstructed")


class ConsistencyFailure(CornerExpError):
    pass


class ConfigError(CornerExpError):
    pass
