"""Exception types raised across the package."""


class NalcertError(Exception):
    """Base class for all package errors."""


class DimensionError(NalcertError, ValueError):
    pass


class ParameterError(NalcertError, ValueError):
    pass


class NonFiniteError(NalcertError, FloatingPointError):
    pass


class AscentDivergenceError(NonFiniteError):
    def __init__(self, iteration, message=None):
        self.iteration = iteration
        super().__init__(message or f"inner ascent produced a non-finite iterate at iteration {iteration}")


class TrainingDivergedError(NonFiniteError):
    def __init__(self, epoch, batch, message=None):
        self.epoch = epoch
        self.batch = batch
        super().__init__(message or f"non-finite training loss at epoch {epoch}, batch {batch}")


class IdxFormatError(NalcertError, ValueError):
    pass


class MatchingError(NalcertError, RuntimeError):
    pass


class ConfigError(NalcertError, ValueError):
    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class ModelFormatError(NalcertError, ValueError):
    pass
