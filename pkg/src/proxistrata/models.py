"""Evaluatable parametric model family used throughout the pipeline.

Each model is a pure function of (data row, parameters): the monotone probit
bridge, the treatment probit, the Gaussian intermediate-proxy model, the
ordered-probit strata model, and the four outcome-mean cases.
"""

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .data import STRATA, Stratum, stratum_index
from .errors import ConfigError

__all__ = [
    "OutcomeCase",
    "OutcomeCoeffs",
    "bridge_h",
    "bridge_features",
    "treatment_prob",
    "treatment_design",
    "w_model",
    "w_model_design",
    "strata_probs_psi",
    "outcome_mean",
]


class OutcomeCase(enum.Enum):
    """The four outcome-mean specifications.

    I   : theta_{z,g,0} + theta_c.C                  (weights given (A, C))
    II  : + theta_a A                                 (weights given (A, C))
    III : theta_{z,g,0} + theta_c.C + theta_w W       (weights given X)
    IV  : + theta_a A + theta_w W                     (weights given X)
    """

    I = "i"
    II = "ii"
    III = "iii"
    IV = "iv"

    @property
    def uses_a(self):
        return self in (OutcomeCase.II, OutcomeCase.IV)

    @property
    def uses_w(self):
        return self in (OutcomeCase.III, OutcomeCase.IV)

    @property
    def conditioning(self):
        return "ac" if self in (OutcomeCase.I, OutcomeCase.II) else "x"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(
                f"unknown outcome case {value!r}; expected one of i, ii, iii, iv") from None


@dataclass(frozen=True)
class OutcomeCoeffs:
    """Outcome-mean coefficients.

    The model's slopes are common to every stratum within a treatment arm
    (the intercept is what varies with (z, g)); the two arms' moment systems
    are fit separately, so slope estimates are stored per arm and converge
    to the same shared-slope truth.

    intercepts : (2, 3) array, [z, stratum] with STRATA column order
    theta_c    : (2, p) covariate slopes per arm (a 1-D or scalar value is
                 broadcast to both arms)
    theta_a    : (2,) exposure-proxy slopes (None unless the case uses A)
    theta_w    : (2,) intermediate-proxy slopes (None unless the case uses W)
    """

    case: OutcomeCase
    intercepts: np.ndarray
    theta_c: np.ndarray
    theta_a: np.ndarray | None = None
    theta_w: np.ndarray | None = None

    def __post_init__(self):
        if self.case.uses_a != (self.theta_a is not None):
            raise ConfigError(f"case {self.case.value}: theta_a presence mismatch")
        if self.case.uses_w != (self.theta_w is not None):
            raise ConfigError(f"case {self.case.value}: theta_w presence mismatch")
        if np.shape(self.intercepts) != (2, 3):
            raise ConfigError("intercepts must be a (2, 3) array indexed by (z, stratum)")
        tc = np.asarray(self.theta_c, dtype=float)
        if tc.ndim < 2:
            tc = np.broadcast_to(np.atleast_1d(tc), (2, np.atleast_1d(tc).shape[0])).copy()
        object.__setattr__(self, "theta_c", tc)
        for name in ("theta_a", "theta_w"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(
                    self, name, np.broadcast_to(np.asarray(v, dtype=float), (2,)).copy())

    @property
    def p(self):
        return self.theta_c.shape[1]

    def arm(self, z):
        """Per-arm parameter vector (3 intercepts, then the arm's slopes)."""
        parts = [self.intercepts[int(z)], self.theta_c[int(z)]]
        if self.theta_a is not None:
            parts.append([self.theta_a[int(z)]])
        if self.theta_w is not None:
            parts.append([self.theta_w[int(z)]])
        return np.concatenate([np.asarray(x, dtype=float) for x in parts])

    def flatten(self):
        return np.concatenate([self.arm(0), self.arm(1)])

    @classmethod
    def from_arms(cls, case, p_cov, arm0, arm1):
        arm0 = np.asarray(arm0, dtype=float)
        arm1 = np.asarray(arm1, dtype=float)
        k = 3 + p_cov + case.uses_a + case.uses_w
        if arm0.size != k or arm1.size != k:
            raise ConfigError(
                f"case {case.value}: expected {k} parameters per arm, "
                f"got {arm0.size}/{arm1.size}")
        intercepts = np.vstack([arm0[:3], arm1[:3]])
        theta_c = np.vstack([arm0[3:3 + p_cov], arm1[3:3 + p_cov]])
        pos = 3 + p_cov
        theta_a = np.array([arm0[pos], arm1[pos]]) if case.uses_a else None
        if case.uses_a:
            pos += 1
        theta_w = np.array([arm0[pos], arm1[pos]]) if case.uses_w else None
        return cls(case=case, intercepts=intercepts, theta_c=theta_c,
                   theta_a=theta_a, theta_w=theta_w)

    @classmethod
    def unflatten(cls, case, p_cov, vec):
        vec = np.asarray(vec, dtype=float)
        k = 3 + p_cov + case.uses_a + case.uses_w
        if vec.size != 2 * k:
            raise ConfigError(
                f"case {case.value}: expected {2 * k} outcome parameters, got {vec.size}")
        return cls.from_arms(case, p_cov, vec[:k], vec[k:])


def _align(*cols, c=None):
    """Broadcast 0-d/1-d columns and the (n, p) covariate block to a common n."""
    arrays = [np.asarray(x, dtype=float) for x in cols]
    n = 1
    for arr in arrays:
        if arr.ndim > 0:
            n = max(n, arr.shape[0])
    out = [np.broadcast_to(np.atleast_1d(arr), (n,)) for arr in arrays]
    if c is None:
        return tuple(out)
    c2d = np.asarray(c, dtype=float)
    if c2d.ndim == 0:
        c2d = c2d.reshape(1, 1)
    elif c2d.ndim == 1:
        # a 1-D c is the per-unit column when rows are vectors, and the
        # covariate vector of a single row otherwise
        c2d = c2d[:, None] if n > 1 else c2d[None, :]
    if c2d.shape[1] > 0:
        n = max(n, c2d.shape[0])
        out = [np.broadcast_to(arr, (n,)) for arr in out]
        c2d = np.broadcast_to(c2d, (n, c2d.shape[1]))
    else:
        c2d = np.empty((n, 0))
    return (*out, c2d)


def bridge_features(z, w, c, quadratic=True):
    """Design of the bridge linear predictor: (1, z-slot, w, c[, c^2]).

    The z column carries the raw indicator; the exp(alpha1) gap multiplies it
    inside bridge_h so monotonicity is structural.
    """
    z, w, c2d = _align(z, w, c=c)
    cols = [np.ones_like(z), z, w, c2d]
    if quadratic:
        cols.append(c2d * c2d)
    return np.column_stack(cols)


def bridge_h(z, w, c, alpha, quadratic=True):
    """Confounding bridge h(z, w, c) = Phi(a0 + exp(a1) z + a_w w + a_c.c [+ a_c2.c^2]).

    exp(a1) > 0 makes h(1,.,.) >= h(0,.,.) everywhere.
    """
    scalar = np.ndim(z) == 0 and np.ndim(w) == 0 and np.ndim(c) <= 1
    feats = bridge_features(z, w, c, quadratic=quadratic)
    coeffs = np.asarray(alpha, dtype=float).copy()
    if coeffs.size != feats.shape[1]:
        raise ConfigError(
            f"bridge alpha has {coeffs.size} entries; design expects {feats.shape[1]}")
    coeffs[1] = np.exp(coeffs[1])
    out = ndtr(feats @ coeffs)
    return float(out[0]) if scalar else out


def treatment_design(a, c):
    a, c2d = _align(a, c=c)
    return np.column_stack([np.ones_like(a), a, c2d])


def treatment_prob(a, c, beta):
    """pr(Z = 1 | A, C) with a probit link on (1, a, c)."""
    scalar = np.ndim(a) == 0 and np.ndim(c) <= 1
    out = ndtr(treatment_design(a, c) @ np.asarray(beta, dtype=float))
    return float(out[0]) if scalar else out


def w_model_design(z, a, c):
    """Regressors (1, z, a, c, c^2) of the intermediate-proxy mean.

    The c^2 block keeps {1, Z, A, C, m(Z,A,C)} linearly independent, which the
    ordered-probit identification step requires.
    """
    z, a, c2d = _align(z, a, c=c)
    return np.column_stack([np.ones_like(z), z, a, c2d, c2d * c2d])


def w_model(z, a, c, gamma, sigma_w):
    """Conditional mean and (constant) sd of W given (Z, A, C)."""
    scalar = np.ndim(z) == 0 and np.ndim(a) == 0 and np.ndim(c) <= 1
    mean = w_model_design(z, a, c) @ np.asarray(gamma, dtype=float)
    if scalar:
        return float(mean[0]), float(sigma_w)
    return mean, float(sigma_w)


def strata_probs_psi(z, a, w, c, psi):
    """Ordered-probit stratum probabilities given (Z, X).

    pr(S1=1) = Phi(lp) and pr(S0=1) = Phi(lp - exp(psi1)) with
    lp = psi0 + psi_z z + psi_w w + psi_a a + psi_c.c, so the three
    probabilities sum to one and the complier share is nonnegative.
    Returns an (n, 3) array in STRATA column order (or (3,) for scalar rows).
    """
    scalar = all(np.ndim(v) == 0 for v in (z, a, w)) and np.ndim(c) <= 1
    z, a, w, c2d = _align(z, a, w, c=c)
    psi = np.asarray(psi, dtype=float)
    p = c2d.shape[1]
    if psi.size != 5 + p:
        raise ConfigError(f"psi has {psi.size} entries; expected {5 + p}")
    lp = psi[0] + psi[2] * z + psi[3] * w + psi[4] * a + c2d @ psi[5:]
    p_s1 = ndtr(lp)
    p_s0 = ndtr(lp - np.exp(psi[1]))
    out = np.empty((z.shape[0], 3))
    out[:, stratum_index(Stratum.ALWAYS_TAKER)] = p_s0
    out[:, stratum_index(Stratum.COMPLIER)] = p_s1 - p_s0
    out[:, stratum_index(Stratum.NEVER_TAKER)] = 1.0 - p_s1
    return out[0] if scalar else out


def outcome_mean(z, g, a, w, c, theta):
    """mu_{z,g}(X; theta) under the coefficient bundle's case."""
    if g not in STRATA:
        raise ConfigError(f"unknown stratum {g!r}")
    scalar = all(np.ndim(v) == 0 for v in (a, w)) and np.ndim(c) <= 1
    a, w, c2d = _align(a, w, c=c)
    if c2d.shape[1] != theta.p:
        raise ConfigError(
            f"covariate dimension {c2d.shape[1]} does not match theta_c ({theta.p})")
    zi = int(z)
    out = theta.intercepts[zi, stratum_index(g)] + c2d @ theta.theta_c[zi]
    if theta.theta_a is not None:
        out = out + theta.theta_a[zi] * a
    if theta.theta_w is not None:
        out = out + theta.theta_w[zi] * w
    return float(out[0]) if scalar else out
