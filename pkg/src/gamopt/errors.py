class GamoptError(Exception):
    """Base class for library errors."""


class DimensionError(GamoptError, ValueError):
    pass


class NonFiniteError(GamoptError, FloatingPointError):
    pass


class DivergenceError(NonFiniteError):
    """Training produced a non-finite loss or update."""

    def __init__(self, message, step=None, line=None):
        super().__init__(message)
        self.step = step
        self.line = line


class ConfigError(GamoptError, ValueError):
    """Invalid run configuration. ``problems`` lists every violation found."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DataError(GamoptError, ValueError):
    pass
