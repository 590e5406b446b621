"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, NumericsError -> 4, gradient-check failure -> 5.
"""


class ShnetError(Exception):
    pass


class ShapeError(ShnetError):
    """Tensor extents are incompatible with the requested operation."""


class ConfigError(ShnetError):
    """Invalid run configuration (unknown variant, bad geometry, ...)."""


class DataError(ShnetError):
    """Dataset, manifest, or file-format problem."""


class GenerationError(DataError):
    """Scene rejection sampling exhausted its retry budget."""


class NumericsError(ShnetError):
    """Non-finite loss or gradients during training."""
