"""Exception hierarchy.

Two families matter to callers: ``ValidationError`` for bad input (the CLI
exits with 1) and ``NumericalError`` for anything that goes wrong while
solving, simulating or learning (the CLI exits with 2). Concrete exceptions
are defined next to the code that raises them.

"""


class Error(Exception):
    pass


class ValidationError(Error):
    pass


class NumericalError(Error):
    pass


class DimensionMismatch(ValidationError):
    pass


class ConfigurationError(ValidationError):
    pass
