"""Privacy-preserving distributed logistic regression with a constant-Hessian optimizer."""
from .core import (ConfigurationError, Dataset, Diverged, FitResult, ModelConfig, NotPositiveDefinite,
                   approx_hessian, gradient, hessian, log_likelihood, newton_fit, privlogit_fit,
                   spectral_bounds)

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "Dataset", "Diverged", "FitResult", "ModelConfig", "NotPositiveDefinite",
    "approx_hessian", "gradient", "hessian", "log_likelihood", "newton_fit", "privlogit_fit",
    "spectral_bounds",
]
