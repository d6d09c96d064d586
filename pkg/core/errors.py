class FineCausalError(Exception):
    """Base class for every error raised by the FineCausal modules."""


class DimensionError(FineCausalError, ValueError):
    pass


class DegenerateRowError(FineCausalError):
    """A masked softmax row has no permitted entry."""


class NonFiniteError(FineCausalError):
    """NaN/Inf reached a place that requires finite values."""


# grad_check reports non-finite losses under this name
EvaluationError = NonFiniteError


class SampleError(FineCausalError, ValueError):
    pass


class UndefinedCorrelationError(FineCausalError):
    pass


class DegenerateRangeError(FineCausalError):
    pass


class IntervalError(FineCausalError, ValueError):
    pass


class DatasetParseError(FineCausalError):
    def __init__(self, message: str, line_number: int):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class CheckpointError(FineCausalError):
    pass


class TrainingDivergedError(FineCausalError):
    """
    Raised when the training loss stops being finite.
    ``checkpoint`` holds the parameters from before the offending step.
    """

    def __init__(self, message: str, checkpoint):
        self.checkpoint = checkpoint
        super().__init__(message)
