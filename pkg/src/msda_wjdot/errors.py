"""Exception types raised across the package."""


class InputError(ValueError):
    """Invalid argument: wrong shape, non-finite value, broken invariant."""


class ParseError(InputError):
    """Malformed dataset or checkpoint file.

    ``line`` is the 1-based line number of the offending row when known.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(InputError):
    """Unknown key, wrong type, or invalid value in an experiment config."""


class DivergenceError(RuntimeError):
    """The optimization produced a non-finite objective."""

    def __init__(self, iteration, message="non-finite objective"):
        super().__init__(f"{message} at iteration {iteration}")
        self.iteration = iteration
