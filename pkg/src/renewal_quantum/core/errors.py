"""Exception and warning types shared across the package."""


class StructuralError(ValueError):
    """Shapes or dimensions of matrices, channels or grids do not match."""


class OffGridError(ValueError):
    """A time was requested that does not fall on a grid point."""


class NumericalGuardError(ValueError):
    """A numerical precondition failed (non-commuting model, coarse grid, ...)."""


class ConfigError(ValueError):
    """An experiment config violates the schema."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class RenewalWarning(UserWarning):
    """Base category for numerical caveats emitted by the library."""


class TruncationWarning(RenewalWarning):
    """A truncated sum or integral left more mass out than the tolerance allows."""


class RenormalizationWarning(RenewalWarning):
    """Input weights were rescaled to restore normalization."""


class InvalidStateError(ValueError):
    """A density matrix, channel or operator violates its defining invariant."""
