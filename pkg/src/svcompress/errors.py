"""Exception and warning types shared across the toolkit.

Hard failures derive from :class:`SvcError` (a ``ValueError``).  Recoverable
numerical events (a floored variance, a ridge-regularized solve) are emitted
as warnings deriving from :class:`SvcWarning` so callers can filter or
escalate them with the standard :mod:`warnings` machinery.
"""


class SvcError(ValueError):
    """Base class for all toolkit errors."""


class EmptyCorpus(SvcError):
    pass


class DimensionMismatch(SvcError):
    pass


class NegativeRelevanceFactor(SvcError):
    pass


class EmptySet(SvcError):
    pass


class SingularPrecision(SvcError):
    """Posterior precision is not positive definite even after ridging."""


class MissingSupervision(SvcError):
    pass


class SpeakerWithNoUtterances(SvcError):
    pass


class SingleSpeaker(SvcError):
    pass


class RankTooLarge(SvcError):
    pass


class OneClassOnly(SvcError):
    """Trial list lacks either target or non-target trials."""


class DegenerateRate(SvcError):
    pass


class InsufficientUtterances(SvcError):
    pass


class MissingUpstream(SvcError):
    def __init__(self, stage, path):
        super().__init__(f"stage '{stage}': required input {path} does not exist")
        self.stage = stage
        self.path = path


class ConfigInconsistent(SvcError):
    def __init__(self, stage, field, message):
        super().__init__(f"stage '{stage}': field '{field}': {message}")
        self.stage = stage
        self.field = field


class FormatError(SvcError):
    pass


class SvcWarning(UserWarning):
    """Base class for recoverable numerical events."""


class ComponentCollapse(SvcWarning):
    pass


class SingularAccumulator(SvcWarning):
    pass


class RidgeApplied(SvcWarning):
    pass


class RankDeficient(SvcWarning):
    pass


class SigmaCollapse(SvcWarning):
    pass


class RhoCollapse(SvcWarning):
    pass


class PsiCollapse(SvcWarning):
    pass


class DegenerateCovariance(SvcWarning):
    pass


class DegenerateInput(SvcWarning):
    """An input vector became zero after centering and has no direction."""
