"""Exception types raised by the library."""


class ConfigurationError(ValueError):
    """Invalid hyperparameters, dimensions or options."""


class NumericalFailure(RuntimeError):
    """A linear-algebra or EP update failed beyond recovery.

    Attributes
    ----------
    eigenvalue : float or None
        Smallest eigenvalue of the offending matrix, when known.
    """

    def __init__(self, message, eigenvalue=None, diagnostics=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue
        self.diagnostics = diagnostics
