"""Exception types shared across the package.

The CLI maps these onto process exit codes, so library code should raise
the most specific type that applies.
"""


class HierdiffError(Exception):
    """Base class for all package errors."""


class ShapeError(HierdiffError, ValueError):
    """An array has the wrong shape for the requested operation."""


class NonFiniteError(HierdiffError, FloatingPointError):
    """A NaN or Inf was produced or passed across an operation boundary."""


class GraphError(HierdiffError, RuntimeError):
    """Invalid use of the computation tape (e.g. backward without forward)."""


class ConfigError(HierdiffError, ValueError):
    """A run configuration is malformed or internally inconsistent."""


class MissingPrerequisiteError(HierdiffError, RuntimeError):
    """A required artifact (checkpoint, dataset, ...) does not exist yet."""


class DataFormatError(HierdiffError, ValueError):
    """A sequence or checkpoint file is malformed."""
