"""Exception types raised by the estimation engine."""


class SBGraphError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(SBGraphError, ValueError):
    """A Cholesky pivot (or Schur complement) was not strictly positive."""


class Overflow(SBGraphError, FloatingPointError):
    """A Poisson log-rate exceeded the safe threshold."""


class DivergentTrajectory(SBGraphError):
    """Energy error of a Hamiltonian trajectory exceeded the divergence bound."""


class AllDivergent(SBGraphError):
    """Nearly every post-adaptation transition diverged."""


class EmptyChain(SBGraphError, ValueError):
    """A summary was requested from zero samples."""
