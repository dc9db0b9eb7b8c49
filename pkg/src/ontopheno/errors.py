"""Exception hierarchy shared across the package."""


class OntoPhenoError(Exception):
    """Base class for all package errors."""


class OntologyError(OntoPhenoError, ValueError):
    """Structural problem in an ontology or annotation set (cycles, dangling ids, ...)."""


class DataFormatError(OntoPhenoError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ShapeError(OntoPhenoError, ValueError):
    """Inconsistent array dimensions or misaligned identifiers."""


class NumericalError(OntoPhenoError, ArithmeticError):
    """Non-finite input to a loss kernel or a diverging computation."""


class DivergenceError(NumericalError):
    def __init__(self, epoch: int, batch: int, detail: str = "loss became non-finite"):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"training diverged at epoch {epoch}, batch {batch}: {detail}")


class UnsupportedOperation(OntoPhenoError):
    """Operation not defined for the given model kind or configuration."""
