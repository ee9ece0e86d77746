"""Exception hierarchy shared by every stage of the pipeline."""


class MapiError(Exception):
    """Base class for all library errors."""


class ShapeError(MapiError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(MapiError, ValueError):
    """A documented precondition was violated."""


class DegenerateError(MapiError, ValueError):
    """A graph, neighbourhood or cohort is too small to be well defined."""


class IncompleteSampleError(MapiError, ValueError):
    """A patient is missing one or more modalities."""


class TrainingDivergenceError(MapiError, FloatingPointError):
    """Loss or gradient became non-finite during optimisation."""

    def __init__(self, message, epoch=None):
        super().__init__(message if epoch is None else f"{message} (epoch {epoch})")
        self.epoch = epoch


class StratificationError(MapiError, ValueError):
    """A class cannot be represented in every fold."""


class UndefinedMetricError(MapiError, ValueError):
    """A ranking metric was requested on a single-class label set."""


class ConfigError(MapiError, ValueError):
    """Invalid configuration key or value."""


class ParseError(MapiError, ValueError):
    """Malformed input file; carries the offending line number."""

    def __init__(self, message, line=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)
        self.line = line
        self.path = path
