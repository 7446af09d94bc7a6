"""Exception types shared across the package.

Validation problems (bad config, malformed input files) subclass ValueError
so callers can treat them uniformly; failures that occur while a protocol or
training run is executing subclass RuntimeError.
"""


class ConfigError(ValueError):
    """A configuration document is malformed or infeasible."""


class DataFormatError(ValueError):
    """An input data file violates the expected format."""


class ProtocolError(RuntimeError):
    """A federated protocol run reached an unrecoverable state."""


class SvdConvergenceError(ProtocolError):
    """The SVD backend failed to converge within its iteration cap."""

    def __init__(self, message: str, iterations: int):
        super().__init__(f"{message} (iteration cap: {iterations})")
        self.iterations = iterations


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during gradient training."""

    def __init__(self, epoch: int, batch: int):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class PipelineError(RuntimeError):
    """A pipeline phase failed; carries the phase name."""

    def __init__(self, phase: str, cause: BaseException):
        super().__init__(f"phase '{phase}' failed: {cause}")
        self.phase = phase
        self.cause = cause
