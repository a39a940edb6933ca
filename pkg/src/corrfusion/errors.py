"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DegenerateBatchError(ValueError):
    """A batch has too few rows for batch statistics (minimum is 2)."""


class ModeError(RuntimeError):
    """An operation received state from the wrong train/infer mode."""


class CacheError(RuntimeError):
    """A backward pass received a cache that does not belong to its state."""


class ManifestError(ValueError):
    """On-disk data does not match its manifest."""


class TrainingDiverged(RuntimeError):
    """Training produced a non-finite loss."""
