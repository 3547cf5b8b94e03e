"""Shared exception taxonomy; the CLI maps these onto exit codes."""


class C2FError(Exception):
    """Base class for all engine errors."""


class ConfigError(C2FError):
    """Invalid configuration value or unsatisfiable precondition."""


class StructuralError(C2FError):
    """Mismatched lengths/shapes, e.g. code vs. spec or mask grids."""


class ValidationError(C2FError):
    """A topology code or op assignment failed validation."""


class ProtocolError(C2FError):
    """Wire-protocol or scheduler-sequencing violation."""

    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = payload


class EvaluationError(C2FError):
    """An evaluator failed to produce a usable result."""

    def __init__(self, message, payload=None, progress=None):
        super().__init__(message)
        self.payload = payload
        self.progress = progress


class EvaluationTimeout(EvaluationError):
    """The evaluator did not answer within the request timeout."""


class ChildExited(EvaluationError):
    """The external evaluator process terminated mid-session."""


class ScoreRangeError(EvaluationError):
    """An evaluator reported a score outside [0, 1]."""
