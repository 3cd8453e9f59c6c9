"""Exceptions raised by the simulation, estimation and learning services."""


class RisPredictError(Exception):
    """Base class for every error raised by ``predictions.services``."""


class InvalidDimensionError(RisPredictError):
    pass


class InvalidInputError(RisPredictError):
    pass


class DomainError(RisPredictError):
    pass


class RankDeficiencyError(RisPredictError):
    def __init__(self, rank: int, expected: int, message: str = ""):
        self.rank = rank
        self.expected = expected
        super().__init__(message or f"rank deficient: effective rank {rank} < {expected}")


class UndefinedMetricError(RisPredictError):
    pass


class InternalInvariantError(RisPredictError):
    pass


class TrainingDivergedError(RisPredictError):
    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"training diverged (non-finite loss) at epoch {epoch}")


class IllConditionedCorrectionError(RisPredictError):
    def __init__(self, index: int, where: str = "g1_hat"):
        self.index = index
        self.where = where
        super().__init__(f"near-zero entry in {where} at index {index}")


class CheckpointIncompatibleError(RisPredictError):
    pass


class InfeasibleBaselineError(RisPredictError):
    pass


class InfiniteSinrError(RisPredictError):
    pass


class FormatError(RisPredictError):
    pass
