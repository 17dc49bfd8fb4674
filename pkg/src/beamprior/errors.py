"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class BeamPriorError(Exception):
    exit_code = 1


class ConfigError(BeamPriorError, ValueError):
    """Invalid configuration or argument (bad dims, unsupported options)."""

    exit_code = 2


class GeometryError(ConfigError):
    """Degenerate scene geometry, e.g. a UE placed on the BS."""


class DataError(BeamPriorError):
    """Missing, malformed or inconsistent files and records."""

    exit_code = 3


class ShapeError(BeamPriorError, ValueError):
    """Array shape does not match the layer or model contract."""

    exit_code = 3


class NumericError(BeamPriorError, ArithmeticError):
    """Non-finite values where finite ones are required."""

    exit_code = 4


class TrainingDivergence(NumericError):
    def __init__(self, epoch, step, loss):
        self.epoch = epoch
        self.step = step
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch}, step {step} (loss={loss!r})")
