"""Exception hierarchy shared by every module."""


class MixShrinkError(Exception):
    """Base class for all library errors."""


class DimensionError(MixShrinkError, ValueError):
    pass


class NonFiniteError(MixShrinkError, ValueError):
    pass


class InvalidWeightsError(MixShrinkError, ValueError):
    pass


class NotSymmetricError(MixShrinkError, ValueError):
    pass


class RankDeficientError(MixShrinkError):
    """Weighted design does not have full column rank."""

    def __init__(self, rank: int, p: int, message: str | None = None):
        self.rank = rank
        self.p = p
        super().__init__(message or f"weighted design is rank deficient: rank {rank} < p = {p}")


class SingularSystemError(MixShrinkError):
    pass


class ZeroResponsibilityError(MixShrinkError):
    pass


class PenaltyError(MixShrinkError, ValueError):
    pass


class FitError(MixShrinkError):
    """Every start of a fit failed; ``start_reasons`` lists why."""

    def __init__(self, message: str, start_reasons: list[str]):
        self.start_reasons = list(start_reasons)
        super().__init__(f"{message}: {', '.join(self.start_reasons)}")


class ExperimentError(MixShrinkError):
    def __init__(self, message: str, n_failed: int = 0, n_total: int = 0):
        self.n_failed = n_failed
        self.n_total = n_total
        super().__init__(message)


class SpecError(MixShrinkError, ValueError):
    """Experiment spec failed validation; ``problems`` enumerates each violation."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid experiment spec:\n  " + "\n  ".join(self.problems))


class DegeneratePartitionError(MixShrinkError):
    """A component lost (almost) all of its observations during an M-step."""


class NumericalError(MixShrinkError):
    pass
