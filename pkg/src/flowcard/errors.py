"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, NumericalError -> 3,
CapacityError -> 4. Plain ValueError is reserved for bad scalar inputs
(domain errors) and maps to the generic failure exit code.
"""


class FlowcardError(Exception):
    """Base class for package-specific failures."""


class ConfigError(FlowcardError):
    """Invalid configuration, schema, template, or file input."""


class SchemaError(ConfigError):
    """A query or feature request references an unknown alias or column."""


class CapacityError(FlowcardError):
    """A size cap was exceeded (alias count, row budget, path enumeration)."""


class NumericalError(FlowcardError):
    """A linear solve or training run failed numerically."""


class TrainingError(NumericalError):
    """Training diverged; the message names the epoch."""


class GenerationError(ConfigError):
    """Query generation exhausted its retries; the message names the rule."""
