"""Error types with machine-readable categories.

Every failure that can surface through the CLI carries a short dotted
category string (e.g. ``dataset.too_small``) so callers and scripts can
match on it without parsing prose.
"""


class KoopmapError(Exception):
    """Base class; ``category`` is a stable dotted identifier."""

    category = "koopmap.error"

    def __init__(self, message, *, key=None):
        self.key = key
        if key is not None:
            message = f"{message} (key={key})"
        super().__init__(message)


class ParameterError(KoopmapError):
    category = "params.invalid"


class DatasetTooSmallError(KoopmapError):
    category = "dataset.too_small"


class MatrixFormatError(KoopmapError):
    category = "io.bad_format"


class DimensionMismatchError(KoopmapError):
    category = "io.dimension_mismatch"


class FixedPointError(KoopmapError):
    category = "systems.fixed_point"


class SamplingError(KoopmapError):
    category = "systems.rejection_failure"


class DegenerateGeometryError(KoopmapError):
    category = "basis.degenerate_geometry"


class TuningError(KoopmapError):
    category = "basis.tuning_failure"


class ConnectivityError(KoopmapError):
    category = "basis.disconnected"


class SpectrumDegeneracyError(KoopmapError):
    category = "basis.degenerate_spectrum"


class EigensolverError(KoopmapError):
    category = "galerkin.nonconvergence"


class SelectionError(KoopmapError):
    category = "generators.insufficient"


class CapacityError(KoopmapError):
    category = "product_basis.capacity"


class DensityError(KoopmapError):
    category = "forecast.bad_density"


class ConfigError(KoopmapError):
    category = "config.invalid"
