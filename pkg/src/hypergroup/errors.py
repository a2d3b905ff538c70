"""Exception types shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, data problems
exit 2, numeric failures exit 3.
"""


class HyperGroupError(Exception):
    """Base class for all package errors."""


class DataError(HyperGroupError):
    """Problem with dataset files or their content."""


class ParseError(DataError):
    """A data file line could not be parsed."""


class IntegrityError(DataError):
    """Dataset content violates a referential or structural constraint."""


class ConfigError(HyperGroupError):
    """Invalid configuration value or combination."""


class DimensionError(HyperGroupError):
    """Tensor shapes do not conform for the requested operation."""


class ContractViolation(HyperGroupError):
    """A documented precondition was violated by the caller."""


class SamplingError(HyperGroupError):
    """Negative sampling is impossible for the given positive set."""


class NumericError(HyperGroupError):
    """A non-finite value was produced where finite values are required."""


class CheckpointError(HyperGroupError):
    """Checkpoint file is malformed or inconsistent with the model config."""
