"""Exception hierarchy shared by every layer of the toolkit."""


class CisError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatch(CisError, ValueError):
    pass


class NumericalFailure(CisError):
    """A solver could not make progress (degenerate pivoting, singular basis...)."""


class EmptyPolytope(CisError):
    pass


class UnboundedPolytope(CisError):
    pass


class DegenerateInput(CisError, ValueError):
    pass


class RowExplosion(CisError):
    """Fourier-Motzkin elimination produced more rows than the configured cap."""


class SeedNotInvariant(CisError):
    pass


class InvalidHorizon(CisError, ValueError):
    pass


class InvalidCertificate(CisError, ValueError):
    pass


class AmbiguousStates(CisError, ValueError):
    pass


class MarginCollapse(CisError):
    pass


class MissingWeights(CisError, ValueError):
    pass


class InitialInfeasible(CisError):
    pass


class InvalidParameters(CisError, ValueError):
    pass


class MissingMatrices(CisError, ValueError):
    pass
