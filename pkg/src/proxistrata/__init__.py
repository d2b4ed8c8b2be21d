"""Principal causal effects under unmeasured treatment/strata confounding,
estimated through a pair of negative-control proxies."""

from .data import (
    Dataset,
    EffectEstimates,
    ParamSet,
    STRATA,
    StrataWeights,
    Stratum,
    validate_dataset,
)
from .errors import (
    ConfigError,
    DataValidationError,
    DomainError,
    EstimationError,
    NumericError,
    ProxistrataError,
    StudyError,
)
from .estimation import EstimationConfig, bootstrap, estimate
from .estimator import ProximalPrincipalEffects
from .models import OutcomeCase, OutcomeCoeffs
from .simulation import (
    DgpConfig,
    derive_true_bridge,
    generate,
    oracle_true_effects,
    run_study,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "EffectEstimates",
    "ParamSet",
    "STRATA",
    "StrataWeights",
    "Stratum",
    "validate_dataset",
    "ConfigError",
    "DataValidationError",
    "DomainError",
    "EstimationError",
    "NumericError",
    "ProxistrataError",
    "StudyError",
    "EstimationConfig",
    "bootstrap",
    "estimate",
    "ProximalPrincipalEffects",
    "OutcomeCase",
    "OutcomeCoeffs",
    "DgpConfig",
    "derive_true_bridge",
    "generate",
    "oracle_true_effects",
    "run_study",
    "__version__",
]
