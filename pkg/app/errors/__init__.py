"""Exception hierarchy shared by every octmorph module.

Each class carries the process exit code the command line reports for it.
"""


class OctMorphError(Exception):
    category = 'internal'
    exit_code = 1

    def __init__(self, message, **details):
        super(OctMorphError, self).__init__(message)
        self.message = message
        self.details = details


class ConfigError(OctMorphError, ValueError):
    category = 'config'
    exit_code = 3


class DataError(OctMorphError):
    category = 'data'
    exit_code = 4


class ShapeError(DataError, ValueError):
    category = 'shape'


class NumericalError(OctMorphError, ArithmeticError):
    category = 'numerical'
    exit_code = 5

    def __init__(self, message, component=None, checkpoint=None, **details):
        super(NumericalError, self).__init__(message, **details)
        self.component = component
        self.checkpoint = checkpoint


from app.errors import handlers  # noqa: E402,F401
