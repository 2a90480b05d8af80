"""Exception hierarchy shared by every traffic_recon module.

The CLI maps ValidationError (and its subclasses) to exit code 2 and every
other ReconError to exit code 1.
"""


class ReconError(Exception):
    """Base class for all traffic_recon failures"""
    pass


class ValidationError(ReconError):
    """Raised when inputs, flags or file contents are invalid"""
    pass


class StructuralError(ValidationError):
    """Raised when a road network or vertex set is structurally invalid"""
    pass


class DomainError(ValidationError):
    """Raised when a value lies outside its allowed domain (e.g. a negative density)"""
    pass


class ModelGraphMismatchError(ValidationError):
    """Raised when a model was trained on a different road network"""
    pass


class ConvergenceError(ReconError):
    """Raised when hyperparameter learning stops before reaching its tolerance.

    Carries the best parameters found so far so callers can inspect or reuse them.
    """

    def __init__(self, message, beta=None, eta=None, grad_norm=None, steps=None):
        super().__init__(message)
        self.beta = beta
        self.eta = eta
        self.grad_norm = grad_norm
        self.steps = steps


class DataDegeneracyError(ConvergenceError):
    """Raised when training data has no spread, so eta diverges"""
    pass


class UndefinedMetricError(ReconError):
    """Raised when an error metric has nothing to average over"""
    pass


class GenerationError(ReconError):
    """Raised when a synthetic network cannot be generated from its spec"""
    pass
