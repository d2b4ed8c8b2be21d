"""Estimator-style front end: hyperparameters in the constructor, ``fit`` on
data, fitted attributes with trailing underscores, get_params/set_params for
pipeline composition."""

import numpy as np

from .data import STRATA, Dataset, validate_dataset
from .errors import EstimationError
from .estimation import EstimationConfig, bootstrap, estimate, weights_ac, weights_x
from .models import OutcomeCase

__all__ = ["ProximalPrincipalEffects"]

_PARAM_NAMES = (
    "outcome_case",
    "bootstrap_reps",
    "seed",
    "integral_method",
    "use_psi",
    "bridge_quadratic",
    "ci_method",
    "estimator",
)


class ProximalPrincipalEffects:
    """Fits per-stratum treatment effects from (z, s, y, a, w, c) columns.

    Parameters mirror EstimationConfig; after ``fit`` the instance carries
    ``alpha_``, ``beta_``, ``gamma_``, ``sigma_w_``, ``psi_``, ``theta_``,
    ``weights_``, ``effects_`` and ``delta_``.
    """

    def __init__(self, outcome_case="i", bootstrap_reps=0, seed=0,
                 integral_method="closed_form", use_psi=None,
                 bridge_quadratic=True, ci_method="percentile",
                 estimator="bridge"):
        self.outcome_case = outcome_case
        self.bootstrap_reps = bootstrap_reps
        self.seed = seed
        self.integral_method = integral_method
        self.use_psi = use_psi
        self.bridge_quadratic = bridge_quadratic
        self.ci_method = ci_method
        self.estimator = estimator

    def get_params(self, deep=True):
        return {name: getattr(self, name) for name in _PARAM_NAMES}

    def set_params(self, **params):
        for name, value in params.items():
            if name not in _PARAM_NAMES:
                raise ValueError(f"unknown parameter {name!r}")
            setattr(self, name, value)
        return self

    def _config(self):
        return EstimationConfig(
            outcome_case=OutcomeCase.parse(self.outcome_case),
            bootstrap_reps=self.bootstrap_reps,
            seed=self.seed,
            integral_method=self.integral_method,
            use_psi=self.use_psi,
            bridge_quadratic=self.bridge_quadratic,
            ci_method=self.ci_method,
            estimator=self.estimator,
        )

    def fit(self, data=None, *, z=None, s=None, y=None, a=None, w=None, c=None):
        """Fit on a validated Dataset or on raw columns."""
        if data is None:
            data = validate_dataset(z=z, s=s, y=y, a=a, w=w, c=c)
        elif not isinstance(data, Dataset):
            raise TypeError("pass a Dataset or raw columns, not both")
        config = self._config()
        fit = bootstrap(data, config) if config.bootstrap_reps > 0 else estimate(data, config)
        self.config_ = config
        self.n_samples_ = data.n
        self.alpha_ = fit.alpha
        self.beta_ = fit.beta
        self.gamma_ = fit.gamma
        self.sigma_w_ = fit.sigma_w
        self.psi_ = fit.psi
        self.theta_ = fit.theta
        self.naive_coef_ = fit.naive_coef
        self.weights_ = fit.weights
        self.effects_ = fit.effects
        self.delta_ = {g.label: fit.effects.delta[g] for g in STRATA}
        return self

    def predict_stratum_proba(self, a, w=None, c=None):
        """Marginal stratum probabilities pi_g for new covariate rows, as an
        (n, 3) array in STRATA column order."""
        self._check_fitted()
        a = np.atleast_1d(np.asarray(a, dtype=float))
        n = a.shape[0]
        c = np.zeros((n, 0)) if c is None else np.asarray(c, dtype=float).reshape(n, -1)
        if self.weights_.conditioning == "x":
            if w is None:
                raise EstimationError(
                    "this fit conditions on the full covariates; pass w")
            w = np.asarray(w, dtype=float).reshape(n)
            if self.psi_ is not None:
                probe = Dataset(z=np.zeros(n), s=np.zeros(n), y=np.zeros(n),
                                a=a, w=w, c=c)
                return weights_x(probe, self.psi_, self.beta_, self.gamma_,
                                 self.sigma_w_).pi
            from scipy.special import ndtr  # naive baseline: apply the stored probit
            coef = self.naive_coef_
            lp0 = coef[0] + coef[2] * a + coef[3] * w + c @ coef[4:]
            p1 = ndtr(lp0 + coef[1])
            p0 = ndtr(lp0)
            pi = np.column_stack([
                np.minimum(p0, p1), np.maximum(p1 - p0, 0.0),
                1.0 - np.maximum(p0, p1)])
            return pi / pi.sum(axis=1, keepdims=True)
        probe = Dataset(z=np.zeros(n), s=np.zeros(n), y=np.zeros(n),
                        a=a, w=np.zeros(n), c=c)
        return weights_ac(probe, self.alpha_, self.gamma_, self.sigma_w_,
                          self.beta_, self.config_).pi

    def _check_fitted(self):
        if not hasattr(self, "effects_"):
            raise EstimationError("estimator is not fitted; call fit first")
