"""Scalar/vector numerical primitives shared by every estimator.

Standard normal cdf/pdf, the closed-form integral of a probit link against a
Gaussian density, Gauss-Hermite quadrature for the cases with no closed form,
and central-difference Jacobians for solver checks and fallbacks.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri, roots_hermitenorm

from .errors import ConfigError, DomainError, NumericError

__all__ = [
    "std_normal_cdf",
    "std_normal_pdf",
    "std_normal_quantile",
    "normal_probit_integral",
    "QuadratureRule",
    "gauss_hermite_rule",
    "finite_diff_jacobian",
]

_SQRT_2PI = np.sqrt(2.0 * np.pi)


def std_normal_cdf(x):
    """Phi(x), accurate in both tails (erfc-based, not a table).

    Accepts scalars or arrays; rejects non-finite input.
    """
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("std_normal_cdf requires finite input")
    out = ndtr(arr)
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


def std_normal_pdf(x):
    """phi(x), the standard normal density."""
    arr = np.asarray(x, dtype=float)
    out = np.exp(-0.5 * arr * arr) / _SQRT_2PI
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


def std_normal_quantile(p):
    """Phi^{-1}(p) for p in (0, 1)."""
    arr = np.asarray(p, dtype=float)
    if np.any((arr <= 0.0) | (arr >= 1.0)):
        raise DomainError("std_normal_quantile requires p strictly inside (0, 1)")
    out = ndtri(arr)
    return float(out) if np.isscalar(p) or arr.ndim == 0 else out


def normal_probit_integral(a, b, m, sigma):
    """E[Phi(a + b W)] for W ~ Normal(m, sigma^2), in closed form.

    Equals Phi((a + b m) / sqrt(1 + b^2 sigma^2)); broadcasts over array
    arguments.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    m = np.asarray(m, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    for name, v in (("a", a), ("b", b), ("m", m), ("sigma", sigma)):
        if not np.all(np.isfinite(v)):
            raise DomainError(f"normal_probit_integral: non-finite {name}")
    if np.any(sigma < 0.0):
        raise DomainError("normal_probit_integral: sigma must be nonnegative")
    out = ndtr((a + b * m) / np.sqrt(1.0 + (b * sigma) ** 2))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes/weights integrating against the standard normal measure."""

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def __post_init__(self):
        if len(self.nodes) != self.order or len(self.weights) != self.order:
            raise ConfigError("quadrature rule: nodes/weights length must equal order")
        if np.any(self.weights <= 0.0):
            raise ConfigError("quadrature rule: weights must be positive")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ConfigError("quadrature rule: weights must sum to 1")
        if self.order > 1 and np.any(np.diff(self.nodes) <= 0.0):
            raise ConfigError("quadrature rule: nodes must be strictly increasing")

    def integrate(self, f):
        """Integrate a callable against dPhi."""
        return float(np.dot(self.weights, f(self.nodes)))

    def expectation(self, f, m, sigma):
        """E[f(W)] for W ~ Normal(m, sigma^2)."""
        return float(np.dot(self.weights, f(m + sigma * self.nodes)))


def gauss_hermite_rule(order):
    """Gauss-Hermite rule normalized for the standard normal measure.

    Exact for polynomials up to degree 2*order - 1.
    """
    if not isinstance(order, (int, np.integer)) or not 1 <= order <= 256:
        raise ConfigError(f"quadrature order must be an integer in [1, 256], got {order!r}")
    nodes, weights = roots_hermitenorm(int(order))
    return QuadratureRule(nodes=nodes, weights=weights / _SQRT_2PI, order=int(order))


def finite_diff_jacobian(f, x, h=None):
    """Central-difference Jacobian of a vector function, O(h^2) accurate.

    Per-coordinate step defaults to max(1e-6, 1e-7 * |x_i|), which keeps the
    step scale-aware without catastrophic cancellation.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    f0 = np.atleast_1d(np.asarray(f(x), dtype=float))
    if not np.all(np.isfinite(f0)):
        raise NumericError("finite_diff_jacobian: f non-finite at base point", params=x.copy())
    jac = np.empty((f0.size, x.size))
    for i in range(x.size):
        hi = h if h is not None else max(1e-6, 1e-7 * abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += hi
        xm[i] -= hi
        fp = np.atleast_1d(np.asarray(f(xp), dtype=float))
        fm = np.atleast_1d(np.asarray(f(xm), dtype=float))
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise NumericError(
                f"finite_diff_jacobian: f non-finite when perturbing coordinate {i}",
                params=x.copy(),
                coordinate=i,
            )
        jac[:, i] = (fp - fm) / (2.0 * hi)
    return jac
