"""Exception types shared across the package.

All errors raised deliberately by this package derive from
:class:`PoolforgeError`, so callers (and the CLI) can distinguish
user/input problems from genuine bugs.
"""


class PoolforgeError(Exception):
    """Base class for all errors raised by poolforge."""


class ValidationError(PoolforgeError, ValueError):
    """Input data violates a documented contract (shape, range, finiteness)."""


class ArtifactError(PoolforgeError):
    """An artifact directory is missing, malformed, or inconsistent."""


class DegenerateSampleError(PoolforgeError):
    """A single sample's data makes an operation undefined (e.g. all-zero probabilities)."""


class DegeneratePoolError(PoolforgeError):
    """The pool as a whole cannot support the requested operation."""


class StrategyError(PoolforgeError):
    """A query strategy cannot run with the given pool/labeled-set/config."""


class AdapterError(PoolforgeError):
    """The external model adapter failed, timed out, or broke protocol."""


class AnnotationError(PoolforgeError):
    """The annotation service cannot start or a labeling session is invalid."""


class ConfigError(PoolforgeError, ValueError):
    """A configuration value is out of range or inconsistent."""
