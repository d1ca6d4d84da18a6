"""Exception types raised across the package."""


class BOAError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(BOAError, ValueError):
    pass


class AllZeroMass(BOAError, ValueError):
    pass


class AbsoluteContinuityViolation(BOAError, ValueError):
    pass


class DomainViolation(BOAError, ValueError):
    pass


class PriorNotInformative(BOAError, ValueError):
    pass


class EtaConditionViolated(BOAError):
    """A learning rate times an excess loss exceeded 1/2.

    ``expert`` and ``round`` locate the first offending entry; ``stream`` is
    the batch index when several streams are processed together.
    """

    def __init__(self, expert, round, value, stream=None):
        self.expert = expert
        self.round = round
        self.value = value
        self.stream = stream
        where = f"expert {expert}, round {round}"
        if stream is not None:
            where += f", stream {stream}"
        super().__init__(f"eta * |ell| = {value:.6g} > 1/2 at {where}")


class FlaggedRun(BOAError):
    """A bound was requested for a run whose hypotheses were violated."""


class EmptyLedger(BOAError, ValueError):
    pass


class EmptyHistory(BOAError, ValueError):
    pass


class EmptySample(BOAError, ValueError):
    pass


class NoAnalyticRisk(BOAError):
    pass


class NotAnalytic(NoAnalyticRisk):
    pass


class HypothesisViolation(BOAError, ValueError):
    pass


class InsufficientData(BOAError, ValueError):
    pass


class ConfigError(BOAError, ValueError):
    """Invalid experiment configuration; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}" if line is not None else message)
