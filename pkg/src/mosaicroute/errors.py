"""Exception types shared across the package."""


class MosaicError(Exception):
    """Base class for all package errors."""


class ConfigError(MosaicError, ValueError):
    """Invalid grid, profile or experiment configuration."""


class DomainError(MosaicError, ValueError):
    """Argument outside the domain of an operation (bad index, infeasible target...)."""


class FormatError(MosaicError, ValueError):
    """Malformed input file."""


class NumericalError(MosaicError, FloatingPointError):
    """Non-finite values showed up during simulation or training."""

    def __init__(self, message, epoch=None, step=None):
        ctx = []
        if epoch is not None:
            ctx.append(f"epoch={epoch}")
        if step is not None:
            ctx.append(f"step={step}")
        if ctx:
            message = f"{message} ({', '.join(ctx)})"
        super().__init__(message)
        self.epoch = epoch
        self.step = step


class TrainingDiverged(NumericalError):
    """Raised by the trainer when the loss stops being finite.

    Carries the partial training log so callers can still write it out.
    """

    def __init__(self, message, epoch=None, step=None, log=None, params=None):
        super().__init__(message, epoch=epoch, step=step)
        self.log = log if log is not None else []
        self.params = params
