"""Exception types shared across the package."""

__all__ = [
    "BevMapError",
    "ContractViolation",
    "DatasetError",
    "CheckpointError",
    "TrainingAborted",
]


class BevMapError(Exception):
    """Base class for all package errors."""


class ContractViolation(BevMapError):
    """An argument or intermediate value broke a documented contract."""


class DatasetError(BevMapError):
    """A dataset on disk is missing, truncated, or fails its checksums."""


class CheckpointError(BevMapError):
    """A checkpoint on disk is missing, malformed, or inconsistent."""


class TrainingAborted(BevMapError):
    """Training stopped because a loss became non-finite."""

    def __init__(self, message, step=None, sample_index=None, seed=None):
        super().__init__(message)
        self.step = step
        self.sample_index = sample_index
        self.seed = seed
