"""Zero-inflated Beta regression with random intercepts, fitted by SAEM."""
from .csvio import InputError, emit_csv, ingest_csv
from .inference import TestResult, bh_adjust, lrt, wald
from .loglik import IsConfig, LoglikResult, loglik_is
from .model import (Dataset, DimensionError, DomainError, Observation, RandomEffects, ZibrError,
                    ZibrParams, beta_log_density, complete_loglik, param_names)
from .saem import FitError, FitResult, StepSchedule, fit
from .sampler import McmcConfig
from .simulate import SimConfig, generate, interpolate, mcar_dropout

__version__ = "0.1.0"

__all__ = [
    "Dataset", "DimensionError", "DomainError", "FitError", "FitResult", "InputError",
    "IsConfig", "LoglikResult", "McmcConfig", "Observation", "RandomEffects", "SimConfig",
    "StepSchedule", "TestResult", "ZibrError", "ZibrParams", "beta_log_density", "bh_adjust",
    "complete_loglik", "emit_csv", "fit", "generate", "ingest_csv", "interpolate", "loglik_is",
    "lrt", "mcar_dropout", "param_names", "wald", "__version__",
]
