"""Exception taxonomy.

Every failure the package raises on purpose goes through one of these, so
callers can tell a caller mistake (ContractError and friends) from a runtime
breakdown (TrainingAbort) without string matching.
"""


class StepNFTError(Exception):
    """Base class for all package errors."""


class ContractError(StepNFTError):
    """An argument violated a documented precondition (shape, range, type)."""


class DomainError(StepNFTError):
    """A mathematical quantity was requested outside its valid domain."""


class DegenerateCovarianceError(StepNFTError):
    """A normalized step error was requested with zero transition covariance."""


class ConfigurationError(StepNFTError):
    """A config file or override failed validation.

    Carries the offending field name when known so the CLI can point at it.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class CheckpointError(StepNFTError):
    """A checkpoint file is missing, truncated, or fails its integrity check."""


class TrainingAbort(StepNFTError):
    """Training hit a non-finite loss or gradient and stopped.

    The offending minibatch is attached for post-mortem dumps.
    """

    def __init__(self, message, batch=None, iteration=None):
        super().__init__(message)
        self.batch = batch
        self.iteration = iteration
