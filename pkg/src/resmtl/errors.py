"""Exception types shared across the package."""


class ResMTLError(Exception):
    """Base class for all package errors."""


class InvalidSpecError(ResMTLError, ValueError):
    """A topology specification is malformed."""


class InvalidAgentError(ResMTLError, IndexError):
    """An agent id is outside ``[0, n)``."""


class ShapeError(ResMTLError, ValueError):
    """Array dimensions do not match the model."""


class InvalidLabelError(ResMTLError, ValueError):
    """A class label is outside ``[0, n_classes)``."""


class InvalidScenarioError(ResMTLError, ValueError):
    """Scenario parameters violate a model precondition (e.g. non-PD Hessian)."""


class NonFiniteError(ResMTLError, ArithmeticError):
    """A NaN or infinite value reached agent state."""


class DataError(ResMTLError, ValueError):
    """A dataset file failed to parse or is missing a required column."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(ResMTLError, ValueError):
    """Configuration failed validation.

    ``problems`` holds ``(field, message)`` pairs, one per offending field.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [("config", problems)]
        self.problems = list(problems)
        super().__init__("; ".join(f"{f}: {m}" for f, m in self.problems))
