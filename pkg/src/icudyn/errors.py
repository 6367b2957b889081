"""Exception hierarchy shared by the pipeline and the command line."""


class IcudynError(Exception):
    """Base class. ``code`` is the machine-readable tag printed by the CLI."""

    code = "E_INTERNAL"
    exit_code = 1


class DataValidationError(IcudynError, ValueError):
    code = "E_DATA"
    exit_code = 3


class CatalogError(DataValidationError):
    code = "E_CATALOG"


class SingleClassError(DataValidationError):
    code = "E_SINGLE_CLASS"


class EmptyWindowError(DataValidationError):
    code = "E_EMPTY_WINDOW"


class ShapeError(DataValidationError):
    code = "E_SHAPE"


class CheckpointError(DataValidationError):
    code = "E_CHECKPOINT"


class NumericError(IcudynError, ArithmeticError):
    code = "E_NUMERIC"
    exit_code = 4


class TrainingDiverged(NumericError):
    """Raised when the loss becomes non-finite; carries the last good state."""

    code = "E_DIVERGED"

    def __init__(self, message, last_good=None, history=None):
        super().__init__(message)
        self.last_good = last_good
        self.history = list(history or [])


class UnstableDynamicsError(NumericError):
    code = "E_UNSTABLE"
