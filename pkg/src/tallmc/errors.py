"""Exception types shared across the package."""


class TallMCError(ValueError):
    """Base class for all contract violations raised by this package."""


class InvalidDesignError(TallMCError):
    """Sampling design is unusable (bad probabilities or weights)."""


class InsufficientSampleError(TallMCError):
    """Fewer draws than the operation requires (variance needs m >= 2)."""


class InvalidToleranceError(TallMCError):
    """A tolerance or target that must be positive is not."""


class UnsupportedOperationError(TallMCError):
    """The model does not declare the capability that was requested."""


class EmptyPopulationError(TallMCError):
    """Operation on a population with zero elements."""


class InvalidConfigError(TallMCError):
    """A run configuration value is outside its legal range."""


class InvalidParamsError(TallMCError):
    """Correlated-proposal parameters outside the feasible region."""


class NumericDomainError(TallMCError):
    """Derivative or density evaluation at an undefined point."""


class InvalidPanelError(TallMCError):
    """A survival panel violates its structural requirements."""


class DegenerateChainError(TallMCError):
    """A trace column is constant; autocorrelations are undefined."""


class InvalidCostError(TallMCError):
    """A reported execution cost is not positive."""


class InsufficientReplicationError(TallMCError):
    """Too few Monte Carlo replications for a stable study."""


class ModeFindingError(TallMCError):
    """Posterior mode search did not converge; carries the best iterate."""

    def __init__(self, message, best_theta=None, best_value=None):
        super().__init__(message)
        self.best_theta = best_theta
        self.best_value = best_value
