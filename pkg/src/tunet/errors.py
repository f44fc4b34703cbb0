"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor or layer shapes are incompatible."""


class ConfigError(ValueError):
    """Invalid or unknown configuration key/value."""


class DataError(ValueError):
    """Dataset files are missing or malformed."""


class NumericError(RuntimeError):
    """A numeric failure (NaN/inf loss) occurred during training."""
