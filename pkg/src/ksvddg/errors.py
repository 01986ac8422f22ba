"""Exception types shared across the package."""

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class SingularMatrixError(np.linalg.LinAlgError):
    """A factorization met a pivot that is numerically zero."""


class SylvesterSingularError(SingularMatrixError):
    """Two diagonal blocks of a Sylvester system have eigenvalues summing to ~0."""

    def __init__(self, msg, block=None):
        super().__init__(msg)
        self.block = block


class SchurConvergenceError(np.linalg.LinAlgError):
    """QR iteration exhausted its sweep budget."""


class KsvdFactorError(SingularMatrixError):
    """A Kronecker factor cannot be inverted; the element should use block Jacobi."""

    def __init__(self, msg, element=None):
        super().__init__(msg)
        self.element = element


class MeshError(ValueError):
    """Invalid or inverted mesh geometry."""

    def __init__(self, msg, element=None):
        super().__init__(msg)
        self.element = element


class NonPhysicalStateError(ValueError):
    """Negative density or pressure met during flux evaluation."""

    def __init__(self, msg, location=None):
        super().__init__(msg)
        self.location = location


class StaleLinearizationError(RuntimeError):
    """A linearization was used with a state it was not built from."""


class BlockBudgetError(MemoryError):
    """A dense block would exceed the configured entry budget."""


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class ConvergenceError(RuntimeError):
    """An iterative method failed to reach its tolerance."""

    def __init__(self, msg, x=None, history=None):
        super().__init__(msg)
        self.x = x
        self.history = list(history) if history is not None else []


class GmresConvergenceError(ConvergenceError):
    pass


class PcgConvergenceError(ConvergenceError):
    pass


class NewtonDivergenceError(ConvergenceError):
    pass
