"""Exception hierarchy shared across the package.

The CLI maps ValidationError (and subclasses) to exit code 1 and every other
ForgeError to exit code 2.
"""


class ForgeError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(ForgeError):
    """Bad user input: config values, file formats, infeasible requests."""


class ConfigError(ValidationError):
    """Config file failed to parse or validate."""


class FormatError(ValidationError):
    """A data or checkpoint file violates its on-disk format."""


class InfeasiblePlanError(ValidationError):
    """No sparsity assignment can satisfy the requested FLOP budget."""


class TrainingError(ForgeError):
    """Training aborted at runtime (e.g. non-finite loss)."""
