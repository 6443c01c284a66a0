"""Exception hierarchy shared by every mvcnn module."""


class MVCNNError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(MVCNNError, ValueError):
    pass


class NonFiniteError(MVCNNError, FloatingPointError):
    pass


class NonDeterministicError(MVCNNError, RuntimeError):
    """Two evaluations of a supposedly deterministic function disagreed."""


class EmbeddingFormatError(MVCNNError, ValueError):
    pass


class SingularSystemError(MVCNNError, ArithmeticError):
    pass


class DatasetFormatError(MVCNNError, ValueError):
    pass


class CheckpointError(MVCNNError, ValueError):
    pass


class ConfigError(MVCNNError, ValueError):
    """Carries every validation problem found, not just the first."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
