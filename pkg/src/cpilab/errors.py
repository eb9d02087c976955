"""Exception taxonomy shared by all cpilab modules."""

from __future__ import annotations


class CpilabError(Exception):
    """Base class for all numerical and structural failures raised by cpilab."""


class DimensionMismatch(CpilabError):
    pass


class NotSymmetric(CpilabError):
    pass


class NotPositiveDefinite(CpilabError):
    """Cholesky breakdown; records which block and the offending pivot index."""

    def __init__(self, msg, block="full", pivot=None):
        super().__init__(msg)
        self.block = block
        self.pivot = pivot


class RankDeficientBasis(CpilabError):
    pass


class FactorizationFailure(CpilabError):
    pass


class ConvergenceFailure(CpilabError):
    """Eigen/SVD iteration stalled; carries whatever converged before the stop."""

    def __init__(self, msg, converged=None):
        super().__init__(msg)
        self.converged = converged


class SingularShift(CpilabError):
    """Inertia shift coincides with an eigenvalue; retry with a perturbed shift."""


class NearSingularShift(CpilabError):
    """Interpolation point too close to an exterior eigenvalue."""

    def __init__(self, msg, pairs=None):
        super().__init__(msg)
        self.pairs = pairs or []


class IncompleteSpectrum(CpilabError):
    pass


class EmptyCoupling(CpilabError):
    pass


class AllTruncated(CpilabError):
    """Truncation rule discarded every singular direction; carries the spectrum."""

    def __init__(self, msg, sigmas=None):
        super().__init__(msg)
        self.sigmas = sigmas


class NoRoot(CpilabError):
    """Root bracket for the parameter optimiser contains no sign change."""

    def __init__(self, msg, bracket=None):
        super().__init__(msg)
        self.bracket = bracket


class OutOfRange(CpilabError):
    pass


class UnsupportedDimension(CpilabError):
    pass


class DomainError(CpilabError):
    pass


class PoleCollision(CpilabError):
    pass


class NoPositiveElement(CpilabError):
    pass


class DegenerateInterface(CpilabError):
    pass


class EmptyProblem(CpilabError):
    pass


class PerturbationTouchesExterior(CpilabError):
    pass


class BasisMismatch(CpilabError):
    pass


class ManifestError(CpilabError):
    """Manifest file missing, unparsable, or out-of-range (CLI exit code 1)."""
