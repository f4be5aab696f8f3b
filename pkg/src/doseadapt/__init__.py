"""Response-adaptive dose-finding designs under model uncertainty."""

from ._backend import backend_name
from .models import DoseResponseModel, MedSpec, ParameterBounds, Shape, eval_mean, eval_shape, gradient, med, med_gradient

__version__ = "0.1.0"

__all__ = [
    "DoseResponseModel",
    "MedSpec",
    "ParameterBounds",
    "Shape",
    "backend_name",
    "eval_mean",
    "eval_shape",
    "gradient",
    "med",
    "med_gradient",
    "__version__",
]
