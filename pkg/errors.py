# errors.py

"""Exception and warning types raised by the Born-series toolkit."""


class ConfigurationError(ValueError):
    """Invalid scenario, grid or CLI configuration."""


class DimensionError(ValueError):
    """Array shape or argument count does not match the grid or operator order."""


class DomainError(ValueError):
    """A numeric argument lies outside the domain of a formula."""


class ResonanceError(ValueError):
    """The wavenumber sits on (or next to) a Neumann eigenwavenumber."""

    def __init__(self, k: float, eigenvalue: float, source: str):
        self.k = float(k)
        self.eigenvalue = float(eigenvalue)
        self.source = source
        super().__init__(
            f"k={self.k:.12g} is within resonance tolerance of the {source} "
            f"Neumann eigenwavenumber {self.eigenvalue:.12g}"
        )


class NonConvergenceError(RuntimeError):
    """Forward iteration did not reach its tolerance."""

    def __init__(self, message: str, residual_history=None, source=None):
        self.residual_history = list(residual_history or [])
        self.source = source
        super().__init__(message)


class NuOverflowError(OverflowError):
    """The nu-sequence left the floating point range."""

    def __init__(self, order: int, largest_safe_n: int):
        self.order = int(order)
        self.largest_safe_n = int(largest_safe_n)
        super().__init__(
            f"nu_{self.order} overflows float64; largest safe order is {self.largest_safe_n}"
        )


class ConvergenceRadiusWarning(UserWarning):
    """The first inverse term lies outside the guaranteed radius of convergence."""
