"""I-prior regression: kernels on mixed covariates, ANOVA effect
decompositions, EM estimation of scale and noise parameters, and
builders for classification, multilevel, and longitudinal models."""

__version__ = "0.1.0"

from .anova import AnovaSpec, expand_sperner
from .data import ColumnSchema, CovariateColumn, Dataset, load_dataset, write_dataset
from .estimate import FitConfig, em_fit, profile_hyperparameter, standard_errors
from .inference import build_problem, fitted_values, posterior_f, predictive
from .kernels import KernelSpec
from .serialize import load_model, save_model

__all__ = [
    "__version__",
    "AnovaSpec",
    "ColumnSchema",
    "CovariateColumn",
    "Dataset",
    "FitConfig",
    "KernelSpec",
    "build_problem",
    "em_fit",
    "expand_sperner",
    "fitted_values",
    "load_dataset",
    "load_model",
    "posterior_f",
    "predictive",
    "profile_hyperparameter",
    "save_model",
    "standard_errors",
    "write_dataset",
]
