"""Exception hierarchy. Every domain failure derives from :class:`MskviewError`."""


class MskviewError(Exception):
    """Base class for all domain errors raised by mskview."""


class MissingPlane(MskviewError):
    pass


class CorruptArray(MskviewError):
    pass


class LabelMismatch(MskviewError):
    pass


class NonBinaryLabel(MskviewError):
    pass


class IoFailure(MskviewError):
    pass


class DegenerateHistogram(MskviewError):
    pass


class PlaneMismatch(MskviewError):
    pass


class TaskMismatch(MskviewError):
    pass


class EmptySlice(MskviewError):
    pass


class WeightsUnavailable(MskviewError):
    pass


class UnknownFamily(MskviewError):
    pass


class NonFiniteLoss(MskviewError):
    pass


class EmptySplit(MskviewError):
    pass


class SingleClassSplit(MskviewError):
    pass


class NonConvergence(MskviewError):
    pass


class SingleClassSet(MskviewError):
    pass


class WrongRowSet(MskviewError):
    pass


class InconsistentAverage(MskviewError):
    pass


class MixedConfigHash(MskviewError):
    pass
