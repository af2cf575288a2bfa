"""Exception hierarchy shared across the package."""


class ACNetError(Exception):
    """Base class for all package errors."""

    kind = "error"


class DimensionError(ACNetError, ValueError):
    kind = "dimension"


class NumericDomainError(ACNetError, ArithmeticError):
    """Raised when a value leaves the domain of an op or becomes non-finite."""

    kind = "numeric_domain"


class ContractError(ACNetError, ValueError):
    kind = "contract"


class InvalidCellError(ACNetError, ValueError):
    kind = "invalid_cell"


class ConfigError(ACNetError, ValueError):
    kind = "config"


class CheckpointError(ACNetError):
    kind = "checkpoint"


class ParseError(ACNetError, ValueError):
    """Schema violation; ``location`` is a JSON-pointer into the document."""

    kind = "parse"

    def __init__(self, message, location=""):
        super().__init__(f"{location or '/'}: {message}")
        self.location = location or "/"


class IntegrityError(ACNetError, ValueError):
    kind = "integrity"


class TrainingDivergedError(ACNetError):
    kind = "diverged"
