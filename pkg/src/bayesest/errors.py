"""Exception hierarchy shared by every estimator in the package."""


class EstimationError(Exception):
    """Base class for all errors raised by bayesest."""


class ContractError(EstimationError, ValueError):
    """Inputs violate a documented precondition (usually a shape mismatch)."""


class ParameterError(EstimationError, ValueError):
    """A tuning parameter is outside its admissible range."""


class NumericalSingularityError(EstimationError, ArithmeticError):
    """A matrix that must be invertible (or PSD) is not, even after jitter."""


class DivergenceError(EstimationError, ArithmeticError):
    """A non-finite value appeared while propagating a state.

    ``step`` and ``index`` locate the failure (time step and, for sample
    based filters, the member/particle index) when known.
    """

    def __init__(self, message, step=None, index=None):
        super().__init__(message)
        self.step = step
        self.index = index


class LinearizationError(EstimationError, ArithmeticError):
    """A Jacobian evaluated to non-finite entries."""


class TransformError(EstimationError, ArithmeticError):
    """A nonlinear map returned non-finite values at a sigma/quadrature point."""


class CapacityError(EstimationError, MemoryError):
    """A requested rule exceeds the configured point budget."""


class DegeneracyError(EstimationError, ArithmeticError):
    """Every weight underflowed to zero; the weighted set carries no mass."""


class ConvergenceError(EstimationError, ArithmeticError):
    """An iterative solver hit its iteration cap.

    ``best`` carries the best iterate found, when there is one.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
