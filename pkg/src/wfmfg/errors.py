class MassMismatchError(ValueError):
    """Weights do not sum to the number of players."""


class BoundaryError(ValueError):
    """A finite-difference stencil would leave the simplex."""


class CFLError(ValueError):
    def __init__(self, dt, admissible):
        self.dt = dt
        self.admissible = admissible
        super().__init__(f"time step {dt:.3e} violates the stability bound; "
                         f"admissible dt <= {admissible:.3e}")


class InstabilityError(FloatingPointError):
    """Non-finite values appeared during a time-stepping loop."""


class SupportError(ValueError):
    """A multinomial draw charges a state with zero mass."""


class RateOverflowError(ValueError):
    """A policy returned a rate above its declared bound."""


class EnumerationError(ValueError):
    """Exact enumeration would be too large."""


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, message, path=()):
        self.path = tuple(path)
        where = "/".join(str(p) for p in self.path)
        super().__init__(f"{where}: {message}" if where else message)
