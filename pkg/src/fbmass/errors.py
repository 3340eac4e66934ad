"""Exception hierarchy shared by every module of the lab."""


class LabError(Exception):
    """Base class for all errors raised by :mod:`fbmass`."""


class PointOutsideChart(LabError):
    pass


class NonPositiveDefinite(LabError):
    pass


class NonPositiveConformalFactor(LabError):
    pass


class QuadratureNotConverged(LabError):
    pass


class ExtrapolationIllConditioned(LabError):
    pass


class RadiusOutsideAnnulus(LabError):
    pass


class DegenerateStencil(LabError):
    pass


class NotMinimal(LabError):
    """The surface is not discretely minimal, so second-variation formulas do not apply."""


class NonManifoldMesh(LabError):
    pass


class StepTooLargeForStencil(LabError):
    pass


class NewtonDiverged(LabError):
    pass


class MaxIterations(LabError):
    pass


class FitIllConditioned(LabError):
    pass


class EigenNotConverged(LabError):
    pass


class InteriorSingular(LabError):
    pass


class BaseNotScalarFlat(LabError):
    pass


class EigenvalueNotPositive(LabError):
    pass


class SolveSingular(LabError):
    pass


class NonPositiveSolution(LabError):
    pass


class ConfigInvalid(LabError):
    pass


class IoFailure(LabError):
    pass


class InadmissibleVariation(LabError):
    """A variation field leaves the ambient boundary along the free boundary."""
