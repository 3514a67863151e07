"""Exception hierarchy.

Each class carries a short ``code`` used as the machine-parsable prefix of
CLI error lines.
"""


class AddDistillError(Exception):
    code = "E_GENERIC"


class DimensionError(AddDistillError, ValueError):
    code = "E_DIMENSION"


class DomainError(AddDistillError, ValueError):
    code = "E_DOMAIN"


class NumericError(AddDistillError, ArithmeticError):
    code = "E_NUMERIC"


class GenerationError(AddDistillError, RuntimeError):
    code = "E_GENERATION"


class TrainingError(AddDistillError, RuntimeError):
    code = "E_TRAINING"

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.detail = message
        self.step = step


class ConfigError(AddDistillError, ValueError):
    code = "E_CONFIG"


class FormatError(AddDistillError, ValueError):
    code = "E_FORMAT"
