"""Observed-data container, principal-stratum vocabulary, parameter bundles.

Every estimator assumes the schema validated here: binary treatment z, binary
intermediate s, outcome y, negative-control exposure a, negative-control
intermediate w, and a (possibly empty) block of remaining covariates c.
"""

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DataValidationError

__all__ = [
    "Stratum",
    "STRATA",
    "Dataset",
    "ParamSet",
    "StrataWeights",
    "EffectEstimates",
    "validate_dataset",
    "WEIGHT_CLIP",
]

# Weights are clipped this far inside [0, 1] before any mixing ratio is formed;
# the cell sums in the eta ratios can numerically underflow otherwise.
WEIGHT_CLIP = 1e-8


class Stratum(enum.Enum):
    """Principal strata under monotonicity; no defier representation exists."""

    ALWAYS_TAKER = "always_taker"
    COMPLIER = "complier"
    NEVER_TAKER = "never_taker"

    @property
    def label(self):
        return self.value


# Fixed column order used by every (n, 3) stratum-indexed array in the package.
STRATA = (Stratum.ALWAYS_TAKER, Stratum.COMPLIER, Stratum.NEVER_TAKER)
_STRATUM_INDEX = {g: i for i, g in enumerate(STRATA)}


def stratum_index(g):
    return _STRATUM_INDEX[g]


@dataclass(frozen=True)
class Dataset:
    """Validated observed data; immutable and safely shareable across workers."""

    z: np.ndarray
    s: np.ndarray
    y: np.ndarray
    a: np.ndarray
    w: np.ndarray
    c: np.ndarray  # shape (n, p), p >= 0

    @property
    def n(self):
        return self.z.shape[0]

    @property
    def p(self):
        return self.c.shape[1]

    def take(self, idx):
        """Row subset (used by the bootstrap); skips re-validation of cells."""
        return Dataset(
            z=self.z[idx], s=self.s[idx], y=self.y[idx],
            a=self.a[idx], w=self.w[idx], c=self.c[idx],
        )

    def cell_counts(self):
        """Counts of the four (z, s) cells as a dict."""
        return {
            (zv, sv): int(np.sum((self.z == zv) & (self.s == sv)))
            for zv in (0, 1) for sv in (0, 1)
        }


def _as_column(name, col, n=None):
    arr = np.asarray(col, dtype=float)
    if arr.ndim != 1:
        raise DataValidationError([(f"column {name}", f"expected 1-D, got shape {arr.shape}")])
    if n is not None and arr.shape[0] != n:
        raise DataValidationError([(f"column {name}", f"length {arr.shape[0]} != {n}")])
    return arr


def validate_dataset(z, s, y, a, w, c=None):
    """Check every schema invariant and return a Dataset, or raise with the
    full list of violations (rule name plus offending rows)."""
    z = _as_column("z", z)
    n = z.shape[0]
    s = _as_column("s", s, n)
    y = _as_column("y", y, n)
    a = _as_column("a", a, n)
    w = _as_column("w", w, n)
    if c is None:
        c = np.empty((n, 0))
    c = np.asarray(c, dtype=float)
    if c.ndim == 1:
        c = c[:, None]
    if c.ndim != 2 or c.shape[0] != n:
        raise DataValidationError([("column c", f"expected (n, p) block, got shape {c.shape}")])

    violations = []
    if n == 0:
        violations.append(("empty dataset", "n = 0"))

    def bad_rows(mask):
        rows = np.flatnonzero(mask)
        head = ", ".join(str(r) for r in rows[:10])
        return head + (", ..." if rows.size > 10 else "")

    for name, col in (("y", y), ("a", a), ("w", w)):
        mask = ~np.isfinite(col)
        if mask.any():
            violations.append((f"non-finite {name}", f"rows {bad_rows(mask)}"))
    if c.size:
        mask = ~np.isfinite(c).all(axis=1)
        if mask.any():
            violations.append(("non-finite c", f"rows {bad_rows(mask)}"))

    for name, col in (("z", z), ("s", s)):
        mask = ~np.isin(col, (0.0, 1.0))
        if mask.any():
            violations.append((f"non-binary {name}", f"rows {bad_rows(mask)}"))

    if n > 0 and np.isin(z, (0.0, 1.0)).all():
        zm = z.mean()
        if not 0.0 < zm < 1.0:
            violations.append(("degenerate treatment arm", f"mean(z) = {zm:g}"))
        if np.isin(s, (0.0, 1.0)).all():
            for zv in (0, 1):
                for sv in (0, 1):
                    if not np.any((z == zv) & (s == sv)):
                        violations.append(("empty (z,s) cell", f"no rows with z={zv}, s={sv}"))

    if violations:
        raise DataValidationError(violations)
    return Dataset(z=z, s=s, y=y, a=a, w=w, c=c)


@dataclass(frozen=True)
class ParamSet:
    """Fitted parameter bundles for the full pipeline.

    ``alpha[1]`` and ``psi[1]`` are stored on the log scale, so the monotone
    gap exp(.) is positive by construction and the complier weight stays
    nonnegative pointwise.

    alpha : (alpha0, log-gap, alpha_w, alpha_c..., [alpha_c2...])
    beta  : treatment probit coefficients on (1, a, c)
    gamma : w-model coefficients on (1, z, a, c, c^2), plus sigma_w > 0
    psi   : (psi0, log-gap, psi_z, psi_w, psi_a, psi_c...); None for the
            conditioning=AC cases that never run the ordered-probit step
    theta : outcome coefficients, see models.OutcomeCoeffs
    """

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    sigma_w: float
    theta: object
    psi: np.ndarray | None = None

    def __post_init__(self):
        if not self.sigma_w > 0:
            raise DataValidationError([("sigma_w", f"must be positive, got {self.sigma_w}")])
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not np.all(np.isfinite(v)):
                raise DataValidationError([(f"non-finite {name}", repr(v))])
        if self.psi is not None and not np.all(np.isfinite(self.psi)):
            raise DataValidationError([("non-finite psi", repr(self.psi))])


@dataclass(frozen=True)
class StrataWeights:
    """Per-unit stratum probabilities and mixing weights.

    conditioning : "ac" when the weights are functions of (A, C), "x" when
        they are functions of the full covariate vector X = (A, W, C).
    omega : (n, 2, 3) array; omega[i, z, g] = pr(G = g | Z = z, V_i), columns
        ordered as STRATA.
    eta1 : (n, 2) mixing weights of the (Z=1, S=1) cell, columns
        (eta_at(1, .), eta_co(1, .)).
    eta0 : (n, 2) mixing weights of the (Z=0, S=0) cell, columns
        (eta_co(0, .), eta_nt(0, .)).
    pi : (n, 3) marginal stratum probabilities pi_g(V), columns as STRATA.
    """

    conditioning: str
    omega: np.ndarray
    eta1: np.ndarray
    eta0: np.ndarray
    pi: np.ndarray
    clipped_units: int = 0

    def check(self, tol=1e-10):
        """Assert the simplex and pairing invariants; returns self."""
        bad = []
        if self.conditioning not in ("ac", "x"):
            bad.append(("conditioning", self.conditioning))
        if np.any(self.omega < -tol) or np.any(self.omega > 1 + tol):
            bad.append(("omega outside [0,1]", f"range [{self.omega.min()}, {self.omega.max()}]"))
        if np.max(np.abs(self.omega.sum(axis=2) - 1.0)) > tol:
            bad.append(("omega rows do not sum to 1", ""))
        if np.max(np.abs(self.eta1.sum(axis=1) - 1.0)) > tol:
            bad.append(("eta(1,.) pair does not sum to 1", ""))
        if np.max(np.abs(self.eta0.sum(axis=1) - 1.0)) > tol:
            bad.append(("eta(0,.) pair does not sum to 1", ""))
        if np.any(self.pi < -tol) or np.max(np.abs(self.pi.sum(axis=1) - 1.0)) > tol:
            bad.append(("pi not a probability simplex", ""))
        if bad:
            raise DataValidationError(bad)
        return self


@dataclass(frozen=True)
class EffectEstimates:
    """Principal-effect point estimates, per-stratum mu components, and
    bootstrap percentile intervals when bootstrap_reps > 0."""

    delta: dict
    mu: dict  # keys (z, Stratum)
    bootstrap_reps: int = 0
    ci_lower: dict | None = None
    ci_upper: dict | None = None
    ci_method: str | None = None
    boot_failures: int = 0
    diagnostics: dict = field(default_factory=dict)

    def as_dict(self):
        out = {
            "delta": {g.label: self.delta[g] for g in STRATA},
            "mu": {f"z{z}_{g.label}": self.mu[(z, g)] for z in (0, 1) for g in STRATA},
            "bootstrap_reps": self.bootstrap_reps,
        }
        if self.ci_lower is not None:
            out["ci"] = {
                g.label: [self.ci_lower[g], self.ci_upper[g]] for g in STRATA
            }
            out["ci_method"] = self.ci_method
            out["bootstrap_failures"] = self.boot_failures
        if self.diagnostics:
            out["diagnostics"] = self.diagnostics
        return out
