"""Exception hierarchy shared by every module of the package."""


class EigDyadError(Exception):
    """Base class for all package errors."""


class ContractViolation(EigDyadError, ValueError):
    """An input broke a documented precondition (shape, symmetry, range)."""


class NumericalError(EigDyadError, ArithmeticError):
    """A numerical kernel (eigensolver, root finder) failed."""


class EstimationError(EigDyadError):
    """An estimator could not be computed, e.g. a singular Gram matrix."""


class DivergenceError(EstimationError):
    """Fixed-point iteration left the trust region around its start."""


class DegenerateEffectsError(EstimationError):
    """The individual effects are too small to identify the intercept shift."""


class ConfigError(EigDyadError, ValueError):
    """Bad configuration file, design spec or command-line input."""


class IngestionError(EigDyadError, ValueError):
    """An edge-list file is malformed, duplicated or incomplete."""
