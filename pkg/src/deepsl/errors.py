"""Exception hierarchy shared by the numerical modules."""


class DSLError(Exception):
    """Base class for all errors raised by deepsl."""


class StepSizeUnderflow(DSLError):
    pass


class MaxStepsExceeded(DSLError):
    pass


class NoEventDetected(DSLError):
    """A trajectory never crossed the event surface within the step cap."""


class StartOnBoundary(DSLError):
    pass


class ShapeMismatch(DSLError, ValueError):
    pass


class BracketFailure(DSLError):
    """The shooting residual kept the same sign after all bracket expansions."""


class SingularJacobian(DSLError):
    def __init__(self, message: str, condition_estimate: float):
        super().__init__(f"{message} (condition estimate {condition_estimate:.3e})")
        self.condition_estimate = condition_estimate


class TrainingAborted(DSLError):
    pass


class ConfigError(DSLError, ValueError):
    """Invalid or unknown configuration value."""
