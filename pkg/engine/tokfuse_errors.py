""" Exceptions that map onto command exit codes """

# Exit codes returned by the commands
EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATASET = 2
EXIT_NUMERICAL = 3
EXIT_WEIGHTS = 4


class ConfigError(ValueError):
    """ Raised for invalid, inconsistent or unknown configuration values """


class DatasetError(ValueError):
    """ Raised when a dataset can't be found or is malformed """


class NumericalError(ArithmeticError):
    """ Raised when a non-finite value shows up, or a gradient check fails """


class WeightsMismatchError(ValueError):
    """ Raised when a weight file doesn't match the configured model """
