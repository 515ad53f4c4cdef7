"""Exception hierarchy.

Configuration problems (bad schema, bad hyperparameters, unusable fold
counts) map to CLI exit code 2; numeric and estimation failures map to 1.
"""


class TevimError(Exception):
    exit_code = 1


class ConfigurationError(TevimError, ValueError):
    exit_code = 2


class SchemaError(ConfigurationError):
    pass


class ParseError(ConfigurationError):
    pass


class ValidationError(ConfigurationError):
    pass


class EstimationError(TevimError, RuntimeError):
    exit_code = 1


class NumericError(EstimationError):
    pass


class DegenerateVTEError(EstimationError):
    pass


class BoundUndefinedError(EstimationError):
    pass
