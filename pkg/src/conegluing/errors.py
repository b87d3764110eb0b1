"""Exception hierarchy.  Exit codes used by the CLI are attached to each class."""


class GluingError(Exception):
    exit_code = 1


class ConfigError(GluingError, ValueError):
    exit_code = 2


class ConvergenceError(GluingError):
    """An iteration did not reach its tolerance.  ``history`` holds the residuals."""

    exit_code = 3

    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = list(history or [])


class NumericalError(GluingError):
    """Singular or indefinite data detected during a computation."""

    exit_code = 4

    def __init__(self, msg, location=None):
        super().__init__(msg if location is None else f"{msg} at {location}")
        self.location = location


class DomainError(GluingError, ValueError):
    """A point lies outside the closure of the domain or outside a chart."""

    exit_code = 2
