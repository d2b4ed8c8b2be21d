"""Three-step estimation of principal causal effects.

Step 1 fits the nuisance models (confounding bridge, treatment probit,
Gaussian intermediate-proxy model, optionally the ordered-probit strata
model) and turns them into per-unit stratum weights. Step 2 fits the outcome
means from the mixture moment constraints of the two mixed (z, s) cells.
Step 3 aggregates to per-stratum effects, with a nonparametric bootstrap for
intervals.
"""

import functools
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import qr
from scipy.special import log_ndtr, ndtr, ndtri

from . import gmm
from .data import (
    STRATA,
    WEIGHT_CLIP,
    Dataset,
    EffectEstimates,
    ParamSet,
    StrataWeights,
    Stratum,
    stratum_index,
)
from .errors import ConfigError, EstimationError, ProxistrataError
from .models import (
    OutcomeCase,
    OutcomeCoeffs,
    bridge_features,
    treatment_design,
    w_model_design,
)
from .numerics import gauss_hermite_rule, std_normal_pdf

__all__ = [
    "EstimationConfig",
    "PipelineFit",
    "probit_mle",
    "fit_bridge",
    "fit_treatment",
    "fit_w_model",
    "weights_ac",
    "fit_psi",
    "weights_x",
    "fit_outcome",
    "principal_effects",
    "estimate",
    "bootstrap",
]

_AT = stratum_index(Stratum.ALWAYS_TAKER)
_CO = stratum_index(Stratum.COMPLIER)
_NT = stratum_index(Stratum.NEVER_TAKER)


@dataclass(frozen=True)
class EstimationConfig:
    """Everything the pipeline needs besides the data.

    integral_method : "closed_form" or "quadrature:K"; selects how the
        conditional expectations over W are evaluated. The probit-linear
        bridge admits the closed form; quadrature is the general fallback.
    use_psi : run the ordered-probit step. Forced on for cases iii/iv, whose
        weights condition on the full covariate vector.
    estimator : "bridge" for the proximal pipeline, "naive" for the
        ignorability baseline that fits stratum probabilities from a plain
        probit of S on (Z, A, W, C) and skips the bridge correction.
    """

    outcome_case: OutcomeCase = OutcomeCase.I
    bootstrap_reps: int = 0
    seed: int = 0
    integral_method: str = "closed_form"
    use_psi: bool = None
    bridge_quadratic: bool = True
    ci_method: str = "normal"
    estimator: str = "bridge"
    max_boot_failure_rate: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "outcome_case", OutcomeCase.parse(self.outcome_case))
        if self.bootstrap_reps < 0:
            raise ConfigError("bootstrap_reps must be >= 0")
        if self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")
        if self.ci_method not in ("percentile", "normal"):
            raise ConfigError(f"unknown ci_method {self.ci_method!r}")
        if self.estimator not in ("bridge", "naive"):
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        _parse_integral(self.integral_method)
        needs_psi = self.outcome_case.conditioning == "x"
        if self.use_psi is None:
            object.__setattr__(self, "use_psi", needs_psi)
        elif needs_psi and not self.use_psi:
            raise ConfigError(
                f"case {self.outcome_case.value} conditions weights on X and requires use_psi")


def _parse_integral(spec):
    if spec in ("closed_form", "closed"):
        return "closed", None
    for prefix in ("quadrature:", "quad:"):
        if isinstance(spec, str) and spec.startswith(prefix):
            try:
                order = int(spec[len(prefix):])
            except ValueError:
                raise ConfigError(f"bad quadrature order in {spec!r}") from None
            if not 1 <= order <= 256:
                raise ConfigError(f"quadrature order must be in [1, 256], got {order}")
            return "quad", order
    raise ConfigError(
        f"unknown integral_method {spec!r}; expected 'closed_form' or 'quadrature:K'")


@functools.lru_cache(maxsize=8)
def _gh_rule(order):
    return gauss_hermite_rule(order)


def _probit_gaussian_expectation(a, b, m, sigma, method):
    """E[Phi(a + b W)] for W ~ N(m, sigma^2), per unit.

    a and m are per-unit vectors, b and sigma scalars.
    """
    kind, order = method
    if kind == "closed":
        return ndtr((a + b * m) / np.sqrt(1.0 + (b * sigma) ** 2))
    rule = _gh_rule(order)
    grid = a[:, None] + b * (m[:, None] + sigma * rule.nodes[None, :])
    return ndtr(grid) @ rule.weights


# ---------------------------------------------------------------------------
# nuisance fits


def probit_mle(design, y, init=None, tol=1e-8, max_iter=100):
    """Probit maximum likelihood via Fisher scoring with step halving.

    Returns (coef, diagnostics); converged means the mean score has inf-norm
    <= tol. Detects separation through diverging coefficients.
    """
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = design.shape
    beta = np.zeros(k) if init is None else np.asarray(init, dtype=float).copy()

    def loglik(b):
        eta = design @ b
        return float(np.sum(y * log_ndtr(eta) + (1.0 - y) * log_ndtr(-eta)))

    ll = loglik(beta)
    score_norm = np.inf
    for it in range(1, max_iter + 1):
        eta = design @ beta
        p = np.clip(ndtr(eta), 1e-12, 1.0 - 1e-12)
        phi = std_normal_pdf(eta)
        r = phi * (y - p) / (p * (1.0 - p))
        score = design.T @ r / n
        score_norm = float(np.abs(score).max())
        if score_norm <= tol:
            return beta, {"iterations": it - 1, "score_norm": score_norm, "converged": True}
        wvec = phi * phi / (p * (1.0 - p))
        info = (design * wvec[:, None]).T @ design / n
        step = np.linalg.solve(info + 1e-12 * np.eye(k), score)
        t = 1.0
        for _ in range(40):
            trial = beta + t * step
            ll_trial = loglik(trial)
            if np.isfinite(ll_trial) and ll_trial >= ll - 1e-14:
                beta, ll = trial, ll_trial
                break
            t *= 0.5
        else:
            break
        if np.abs(beta).max() > 30.0:
            raise EstimationError(
                "probit coefficients diverging; perfect separation suspected", step="probit")
    raise EstimationError(
        f"probit MLE did not converge (score inf-norm {score_norm:.2e})", step="probit")


@dataclass
class StepFit:
    """A fitted parameter vector with its solver diagnostics."""

    params: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def fit_bridge(data, config, init=None):
    """Solve the bridge estimating equations
    mean[{S - h(Z, W, C; alpha)} B(Z, A, C)] = 0 with B = (1, Z, A, C[, C^2]).
    """
    feats = bridge_features(data.z, data.w, data.c, quadratic=config.bridge_quadratic)
    cols = [np.ones(data.n), data.z, data.a, data.c]
    if config.bridge_quadratic:
        cols.append(data.c * data.c)
    instruments = np.column_stack(cols)
    k = feats.shape[1]
    q = instruments.shape[1]

    def moment_fn(alpha):
        coeffs = np.asarray(alpha, dtype=float).copy()
        coeffs[1] = np.exp(np.clip(coeffs[1], -40.0, 40.0))
        resid = data.s - ndtr(feats @ coeffs)
        return instruments * resid[:, None]

    def jacobian_fn(alpha):
        coeffs = np.asarray(alpha, dtype=float).copy()
        gap = np.exp(np.clip(coeffs[1], -40.0, 40.0))
        coeffs[1] = gap
        eta = feats @ coeffs
        grad_cols = feats.copy()
        grad_cols[:, 1] *= gap
        w = std_normal_pdf(eta)
        return -(instruments * w[:, None]).T @ grad_cols / data.n

    if init is None:
        init = _bridge_init(data, feats)
    problem = gmm.MomentProblem(
        moment_fn=moment_fn, init=np.asarray(init, dtype=float),
        dim_moment=q, jacobian_fn=jacobian_fn,
    )
    options = gmm.GmmOptions(seed=config.seed + 11)
    solution = gmm.two_step(problem, options) if q > k else gmm.solve(problem, options)
    if not solution.converged:
        raise EstimationError(
            f"bridge moments not solved (inf-norm {solution.moment_norm:.2e})",
            step="fit_bridge")
    return StepFit(solution.params, {
        "iterations": solution.iterations,
        "moment_norm": solution.moment_norm,
        "starts_used": solution.diagnostics.get("starts_used", 1),
    })


def _bridge_init(data, feats):
    """Cold start: a plain probit of S on the bridge regressors, with the z
    coefficient moved to the log-gap scale."""
    try:
        coef, _ = probit_mle(feats, data.s)
        init = coef.copy()
        init[1] = np.log(max(coef[1], 0.05))
        return init
    except ProxistrataError:
        init = np.zeros(feats.shape[1])
        init[0] = ndtri(np.clip(data.s.mean(), 1e-6, 1 - 1e-6))
        init[1] = np.log(0.5)
        return init


def fit_treatment(data, init=None):
    """Probit MLE of Z on (1, A, C)."""
    design = treatment_design(data.a, data.c)
    try:
        coef, diag = probit_mle(design, data.z, init=init)
    except EstimationError as exc:
        raise EstimationError(str(exc), step="fit_treatment") from exc
    return StepFit(coef, diag)


_W_COLUMN_NAMES = ("1", "z", "a")


def fit_w_model(data):
    """Gaussian-linear MLE of W on (1, Z, A, C, C^2): least squares with the
    MLE variance denominator n."""
    design = w_model_design(data.z, data.a, data.c)
    k = design.shape[1]
    coef, _, rank, _ = np.linalg.lstsq(design, data.w, rcond=None)
    if rank < k:
        names = list(_W_COLUMN_NAMES) + [f"c{j + 1}" for j in range(data.p)] \
            + [f"c{j + 1}^2" for j in range(data.p)]
        _, _, pivots = qr(design, mode="economic", pivoting=True)
        collinear = sorted(names[j] for j in pivots[rank:])
        raise EstimationError(
            f"w-model design rank deficient (rank {rank} < {k}); "
            f"collinear columns: {', '.join(collinear)}", step="fit_w_model")
    resid = data.w - design @ coef
    sigma_w = float(np.sqrt(np.mean(resid * resid)))
    diag = {"normal_eq_residual": float(np.abs(design.T @ resid / data.n).max())}
    if sigma_w < 1e-10:
        diag["degenerate"] = True
    return coef, sigma_w, diag


# ---------------------------------------------------------------------------
# stratum weights


def _bridge_base(data, alpha, config):
    """Bridge linear predictor without the z-gap and without the W term."""
    alpha = np.asarray(alpha, dtype=float)
    p = data.p
    base = alpha[0] + data.c @ alpha[3:3 + p]
    if config.bridge_quadratic:
        base = base + (data.c * data.c) @ alpha[3 + p:3 + 2 * p]
    return base


def weights_ac(data, alpha, gamma, sigma_w, beta, config):
    """Stratum weights conditioned on (A, C), via the identified bridge:

    omega_at(z, A, C) = E{h(0, W, C) | Z=z, A, C},
    omega_nt(z, A, C) = 1 - E{h(1, W, C) | Z=z, A, C},
    omega_co the remainder; eta from the two mixed cells; pi averages over
    the treatment model.
    """
    alpha = np.asarray(alpha, dtype=float)
    method = _parse_integral(config.integral_method)
    base = _bridge_base(data, alpha, config)
    gap = np.exp(alpha[1])
    a_w = alpha[2]

    omega = np.empty((data.n, 2, 3))
    for zv in (0, 1):
        m_z = w_model_design(np.full(data.n, float(zv)), data.a, data.c) @ gamma
        e_h0 = _probit_gaussian_expectation(base, a_w, m_z, sigma_w, method)
        e_h1 = _probit_gaussian_expectation(base + gap, a_w, m_z, sigma_w, method)
        omega[:, zv, _AT] = e_h0
        omega[:, zv, _CO] = e_h1 - e_h0
        omega[:, zv, _NT] = 1.0 - e_h1

    pz1 = ndtr(treatment_design(data.a, data.c) @ np.asarray(beta, dtype=float))
    return _assemble_weights("ac", omega, pz1, step="weights_ac")


def _assemble_weights(conditioning, omega, pz1, step, pi=None):
    lo, hi = float(omega.min()), float(omega.max())
    if lo < -0.05 or hi > 1.05:
        raise EstimationError(
            f"stratum weight outside [-0.05, 1.05] (range [{lo:.4f}, {hi:.4f}]); "
            "model badly misspecified", step=step)
    out_of_range = int(np.sum((omega < -1e-6) | (omega > 1.0 + 1e-6)))
    omega = np.clip(omega, 0.0, 1.0) if out_of_range else omega
    omega = omega / omega.sum(axis=2, keepdims=True)

    clipped = np.clip(omega, WEIGHT_CLIP, 1.0 - WEIGHT_CLIP)
    n_clipped = int(np.sum(clipped != omega))
    denom1 = clipped[:, 1, _AT] + clipped[:, 1, _CO]
    eta1 = np.column_stack([clipped[:, 1, _AT] / denom1, clipped[:, 1, _CO] / denom1])
    denom0 = clipped[:, 0, _CO] + clipped[:, 0, _NT]
    eta0 = np.column_stack([clipped[:, 0, _CO] / denom0, clipped[:, 0, _NT] / denom0])

    if pi is None:
        pi = omega[:, 0, :] * (1.0 - pz1)[:, None] + omega[:, 1, :] * pz1[:, None]
    return StrataWeights(
        conditioning=conditioning, omega=omega, eta1=eta1, eta0=eta0, pi=pi,
        clipped_units=n_clipped + out_of_range,
    ).check()


def fit_psi(data, w_ac, gamma, sigma_w, config, init=None):
    """Fit the ordered-probit strata parameters by matching the identified
    (A, C)-weights:

    omega_at(Z,A,C) = E{pr(S0=1 | Z,X; psi) | Z,A,C},
    omega_at + omega_co = E{pr(S1=1 | Z,X; psi) | Z,A,C},

    each conditional expectation in closed form through the Gaussian W model,
    instrumented by (1, Z, A, C, m(Z,A,C)).
    """
    method = _parse_integral(config.integral_method)
    rows = np.arange(data.n)
    zi = data.z.astype(int)
    t0 = w_ac.omega[rows, zi, _AT]
    t1 = t0 + w_ac.omega[rows, zi, _CO]

    m_own = w_model_design(data.z, data.a, data.c) @ gamma
    instruments = np.column_stack([np.ones(data.n), data.z, data.a, data.c, m_own])
    q = 2 * instruments.shape[1]
    k = 5 + data.p
    sw2 = sigma_w * sigma_w

    def _parts(psi):
        psi = np.asarray(psi, dtype=float)
        gap = np.exp(np.clip(psi[1], -40.0, 40.0))
        lp = psi[0] + psi[2] * data.z + psi[4] * data.a + data.c @ psi[5:]
        return psi, gap, lp

    def moment_fn(psi):
        psi, gap, lp = _parts(psi)
        if method[0] == "closed":
            d = np.sqrt(1.0 + psi[3] ** 2 * sw2)
            p1 = ndtr((lp + psi[3] * m_own) / d)
            p0 = ndtr((lp - gap + psi[3] * m_own) / d)
        else:
            p1 = _probit_gaussian_expectation(lp, psi[3], m_own, sigma_w, method)
            p0 = _probit_gaussian_expectation(lp - gap, psi[3], m_own, sigma_w, method)
        return np.hstack([
            instruments * (t0 - p0)[:, None],
            instruments * (t1 - p1)[:, None],
        ])

    def jacobian_fn(psi):
        psi, gap, lp = _parts(psi)
        d = np.sqrt(1.0 + psi[3] ** 2 * sw2)
        jac = np.empty((q, k))
        for t, offset in ((0, -gap), (1, 0.0)):
            num = lp + offset + psi[3] * m_own
            u = num / d
            phi = std_normal_pdf(u)
            # d u / d psi_j, stacked as columns in psi order
            du = np.empty((data.n, k))
            du[:, 0] = 1.0 / d
            du[:, 1] = (offset / d) if t == 0 else 0.0
            du[:, 2] = data.z / d
            du[:, 3] = m_own / d - num * psi[3] * sw2 / d ** 3
            du[:, 4] = data.a / d
            du[:, 5:] = data.c / d
            block = -(instruments * phi[:, None]).T @ du / data.n
            half = instruments.shape[1]
            jac[t * half:(t + 1) * half, :] = block
        return jac

    if init is None:
        init = _psi_init(t0, t1, instruments, data.p)
    problem = gmm.MomentProblem(
        moment_fn=moment_fn, init=np.asarray(init, dtype=float), dim_moment=q,
        jacobian_fn=jacobian_fn if method[0] == "closed" else None,
    )
    solution = gmm.two_step(problem, gmm.GmmOptions(seed=config.seed + 13))
    if not solution.converged:
        raise EstimationError(
            f"ordered-probit moment system not solved (inf-norm {solution.moment_norm:.2e})",
            step="fit_psi")
    return StepFit(solution.params, {
        "iterations": solution.iterations,
        "moment_norm": solution.moment_norm,
    })


def _psi_init(t0, t1, instruments, p):
    """Start from probit-scale regressions of the weight targets, exact when
    psi_w^2 sigma_w^2 is negligible."""
    z1 = ndtri(np.clip(t1, 1e-6, 1 - 1e-6))
    z0 = ndtri(np.clip(t0, 1e-6, 1 - 1e-6))
    coef1, *_ = np.linalg.lstsq(instruments, z1, rcond=None)
    coef0, *_ = np.linalg.lstsq(instruments, z0, rcond=None)
    gap = max(coef1[0] - coef0[0], 0.05)
    # instrument layout: (1, z, a, c_1..c_p, m)
    init = np.empty(5 + p)
    init[0] = coef1[0]
    init[1] = np.log(gap)
    init[2] = coef1[1]
    init[3] = coef1[3 + p]      # the m(Z,A,C) coefficient plays psi_w
    init[4] = coef1[2]
    init[5:] = coef1[3:3 + p]
    return init


def weights_x(data, psi, beta, gamma, sigma_w):
    """Stratum weights conditioned on the full covariates X = (A, W, C).

    omega from the fitted ordered probit; pi mixes the two treatment arms
    with weights proportional to pr(z | A, C) f(W | z, A, C).
    """
    psi = np.asarray(psi, dtype=float)
    gap = np.exp(psi[1])
    lp_base = psi[0] + psi[3] * data.w + psi[4] * data.a + data.c @ psi[5:]

    omega = np.empty((data.n, 2, 3))
    dens = np.empty((data.n, 2))
    for zv in (0, 1):
        lp = lp_base + psi[2] * zv
        p1 = ndtr(lp)
        p0 = ndtr(lp - gap)
        omega[:, zv, _AT] = p0
        omega[:, zv, _CO] = p1 - p0
        omega[:, zv, _NT] = 1.0 - p1
        m_z = w_model_design(np.full(data.n, float(zv)), data.a, data.c) @ gamma
        dens[:, zv] = std_normal_pdf((data.w - m_z) / sigma_w) / sigma_w

    pz1 = ndtr(treatment_design(data.a, data.c) @ np.asarray(beta, dtype=float))
    num = dens * np.column_stack([1.0 - pz1, pz1])
    total = num.sum(axis=1)
    if np.any(total <= 0.0):
        raise EstimationError("zero mixture density in pi_g(X)", step="weights_x")
    lam = num / total[:, None]
    pi = omega[:, 0, :] * lam[:, [0]] + omega[:, 1, :] * lam[:, [1]]
    return _assemble_weights("x", omega, pz1, step="weights_x", pi=pi)


def naive_weights(data, config, init=None):
    """Ignorability baseline: stratum probabilities from a plain probit of S
    on (1, Z, A, W, C), no bridge correction, weights independent of z."""
    design = np.column_stack([np.ones(data.n), data.z, data.a, data.w, data.c])
    coef, diag = probit_mle(design, data.s, init=init)
    lp0 = design @ coef - coef[1] * data.z
    p1 = ndtr(lp0 + coef[1])
    p0 = ndtr(lp0)
    omega_one = np.column_stack([
        np.minimum(p0, p1), np.maximum(p1 - p0, 0.0), 1.0 - np.maximum(p0, p1)])
    omega_one /= omega_one.sum(axis=1, keepdims=True)
    omega = np.repeat(omega_one[:, None, :], 2, axis=1)
    pz1 = np.full(data.n, 0.5)
    weights = _assemble_weights("x", omega, pz1, step="naive_weights", pi=omega_one)
    return weights, StepFit(coef, diag)


# ---------------------------------------------------------------------------
# outcome step


def _outcome_structure(data, weights, case):
    """Per-arm design matrices of the outcome moment systems.

    Within arm z the residual for unit i is y_i - M_i theta_z, where the
    intercept columns are cell-local (a plain indicator in the pure cell,
    the eta mixing weights in the mixed cell) and the case's slope columns
    are common to the arm's two cells. Instrumenting each restriction with
    exactly these columns makes each arm's system exactly identified, so the
    solved moments vanish to solver tolerance."""
    p = data.p
    # x-conditioned weights can always feed an (A, C)-cased model (the naive
    # baseline does), but AC weights cannot support X-conditioned moments
    if case.conditioning == "x" and weights.conditioning != "x":
        raise EstimationError(
            f"case {case.value} conditions on X but weights carry "
            f"{weights.conditioning!r}", step="fit_outcome")

    arms = {}
    for zv in (0, 1):
        mask = data.z == zv
        nz = int(mask.sum())
        k = 3 + p + case.uses_a + case.uses_w
        design = np.zeros((nz, k))
        s_arm = data.s[mask]
        if zv == 0:
            pure = s_arm == 1
            design[pure, _AT] = 1.0
            design[~pure, _CO] = weights.eta0[mask][~pure, 0]
            design[~pure, _NT] = weights.eta0[mask][~pure, 1]
        else:
            pure = s_arm == 0
            design[pure, _NT] = 1.0
            design[~pure, _AT] = weights.eta1[mask][~pure, 0]
            design[~pure, _CO] = weights.eta1[mask][~pure, 1]
        design[:, 3:3 + p] = data.c[mask]
        pos = 3 + p
        if case.uses_a:
            design[:, pos] = data.a[mask]
            pos += 1
        if case.uses_w:
            design[:, pos] = data.w[mask]
        arms[zv] = (mask, design)
    return arms


def _linear_gmm(design, instruments, y, init, seed):
    n = design.shape[0]
    jac = -instruments.T @ design / n

    def moment_fn(theta):
        return instruments * (y - design @ theta)[:, None]

    problem = gmm.MomentProblem(
        moment_fn=moment_fn, init=init, dim_moment=instruments.shape[1],
        jacobian_fn=lambda theta: jac,
    )
    return gmm.solve(problem, gmm.GmmOptions(seed=seed))


def fit_outcome(data, weights, config, init=None):
    """Fit the outcome coefficients from the cell moment restrictions: the
    two Z=0 restrictions jointly, then the two Z=1 restrictions jointly,
    each an exactly identified moment system."""
    case = config.outcome_case
    arms = _outcome_structure(data, weights, case)
    p = data.p
    k = 3 + p + case.uses_a + case.uses_w

    arm_params = {}
    moment_norm = 0.0
    iterations = 0
    for zv in (0, 1):
        mask, design = arms[zv]
        # linear-independence check, the empirical analogue of the
        # identification conditions
        rank = np.linalg.matrix_rank(design.T @ design / design.shape[0])
        if rank < k:
            raise EstimationError(
                f"outcome instrument design rank-deficient in the Z={zv} block "
                f"(rank {rank} < {k})", step="fit_outcome")
        start = np.zeros(k) if init is None else np.asarray(init, dtype=float)[zv * k:(zv + 1) * k]
        solution = _linear_gmm(design, design, data.y[mask], start,
                               seed=config.seed + 17 + zv)
        if not solution.converged:
            raise EstimationError(
                f"outcome Z={zv} moment block not solved "
                f"(inf-norm {solution.moment_norm:.2e})", step="fit_outcome")
        arm_params[zv] = solution.params
        moment_norm = max(moment_norm, solution.moment_norm)
        iterations += solution.iterations

    theta = OutcomeCoeffs.from_arms(case, p, arm_params[0], arm_params[1])
    return theta, {"iterations": iterations, "moment_norm": moment_norm}


def _mu_matrix(data, theta):
    """mu_{z,g}(X_i; theta) for every unit, shape (n, 2, 3)."""
    out = np.empty((data.n, 2, 3))
    for zv in (0, 1):
        slope_part = data.c @ theta.theta_c[zv]
        if theta.theta_a is not None:
            slope_part = slope_part + theta.theta_a[zv] * data.a
        if theta.theta_w is not None:
            slope_part = slope_part + theta.theta_w[zv] * data.w
        for g in range(3):
            out[:, zv, g] = theta.intercepts[zv, g] + slope_part
    return out


def principal_effects(data, weights, theta, config):
    """Aggregate to per-stratum effects:
    delta_g = mean(mu_{1,g} pi_g) / mean(pi_g) - mean(mu_{0,g} pi_g) / mean(pi_g).
    """
    mu_units = _mu_matrix(data, theta)
    pi_mean = weights.pi.mean(axis=0)
    if np.any(pi_mean <= 1e-6):
        g_bad = STRATA[int(np.argmin(pi_mean))]
        raise EstimationError(
            f"empty stratum: mean pi_{g_bad.label} = {pi_mean.min():.2e}",
            step="principal_effects")
    mu = {}
    for zv in (0, 1):
        weighted = (mu_units[:, zv, :] * weights.pi).mean(axis=0) / pi_mean
        for g in STRATA:
            mu[(zv, g)] = float(weighted[stratum_index(g)])
    delta = {g: mu[(1, g)] - mu[(0, g)] for g in STRATA}
    return EffectEstimates(delta=delta, mu=mu, bootstrap_reps=0)


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class PipelineFit:
    """One full pass of the estimator on one dataset."""

    effects: EffectEstimates
    weights: StrataWeights
    theta: OutcomeCoeffs
    alpha: np.ndarray = None
    beta: np.ndarray = None
    gamma: np.ndarray = None
    sigma_w: float = None
    psi: np.ndarray = None
    naive_coef: np.ndarray = None
    diagnostics: dict = field(default_factory=dict)

    def param_set(self):
        if self.alpha is None:
            raise EstimationError("naive fit carries no bridge parameter set")
        return ParamSet(alpha=self.alpha, beta=self.beta, gamma=self.gamma,
                        sigma_w=self.sigma_w, theta=self.theta, psi=self.psi)


def estimate(data, config, warm=None):
    """Run the three-step pipeline once (point estimates only)."""
    if not isinstance(data, Dataset):
        raise ConfigError("estimate expects a validated Dataset")
    if config.estimator == "naive":
        return _estimate_naive(data, config, warm)

    diagnostics = {}
    bridge = fit_bridge(data, config, init=None if warm is None else warm.alpha)
    diagnostics["bridge"] = bridge.diagnostics
    treatment = fit_treatment(data, init=None if warm is None else warm.beta)
    diagnostics["treatment"] = treatment.diagnostics
    gamma, sigma_w, w_diag = fit_w_model(data)
    diagnostics["w_model"] = w_diag

    w_ac = weights_ac(data, bridge.params, gamma, sigma_w, treatment.params, config)
    psi = None
    if config.use_psi:
        psi_fit = fit_psi(data, w_ac, gamma, sigma_w, config,
                          init=None if warm is None else warm.psi)
        diagnostics["psi"] = psi_fit.diagnostics
        psi = psi_fit.params
    if config.outcome_case.conditioning == "x":
        weights = weights_x(data, psi, treatment.params, gamma, sigma_w)
    else:
        weights = w_ac
    diagnostics["clipped_weight_units"] = weights.clipped_units

    theta, theta_diag = fit_outcome(data, weights, config,
                                    init=None if warm is None else theta_init_from(warm))
    diagnostics["outcome"] = theta_diag
    effects = principal_effects(data, weights, theta, config)
    effects = replace(effects, diagnostics=dict(diagnostics))
    return PipelineFit(
        effects=effects, weights=weights, theta=theta,
        alpha=bridge.params, beta=treatment.params, gamma=gamma, sigma_w=sigma_w,
        psi=psi, diagnostics=diagnostics,
    )


def theta_init_from(warm):
    return None if warm is None or warm.theta is None else warm.theta.flatten()


def _estimate_naive(data, config, warm=None):
    diagnostics = {}
    weights, sfit = naive_weights(
        data, config, init=None if warm is None else warm.naive_coef)
    diagnostics["naive_probit"] = sfit.diagnostics
    theta, theta_diag = fit_outcome(data, weights, config, init=theta_init_from(warm))
    diagnostics["outcome"] = theta_diag
    effects = principal_effects(data, weights, theta, config)
    effects = replace(effects, diagnostics=dict(diagnostics))
    return PipelineFit(effects=effects, weights=weights, theta=theta,
                       naive_coef=sfit.params, diagnostics=diagnostics)


def _resample_ok(data, idx):
    z = data.z[idx]
    s = data.s[idx]
    for zv in (0, 1):
        for sv in (0, 1):
            if not np.any((z == zv) & (s == sv)):
                return False
    return True


def bootstrap(data, config):
    """Point estimates plus nonparametric-bootstrap confidence intervals.

    Every replicate resamples units with replacement and reruns the full
    pipeline (bridge included); failed replicates are recorded and skipped.
    Deterministic given (data, config.seed).
    """
    point = estimate(data, config)
    reps = config.bootstrap_reps
    if reps == 0:
        return point

    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    all_idx = rng.integers(0, data.n, size=(reps, data.n))
    deltas = np.empty((reps, 3))
    failures = {}
    ok = np.zeros(reps, dtype=bool)
    for b in range(reps):
        idx = all_idx[b]
        if not _resample_ok(data, idx):
            failures["empty (z,s) cell"] = failures.get("empty (z,s) cell", 0) + 1
            continue
        try:
            fit_b = estimate(data.take(idx), config, warm=point)
        except (ProxistrataError, np.linalg.LinAlgError) as exc:
            key = type(exc).__name__
            failures[key] = failures.get(key, 0) + 1
            continue
        deltas[b] = [fit_b.effects.delta[g] for g in STRATA]
        ok[b] = True

    n_fail = reps - int(ok.sum())
    if n_fail > config.max_boot_failure_rate * reps:
        raise EstimationError(
            f"{n_fail}/{reps} bootstrap replicates failed: {failures}", step="bootstrap")

    good = deltas[ok]
    if config.ci_method == "percentile":
        lo = np.percentile(good, 2.5, axis=0)
        hi = np.percentile(good, 97.5, axis=0)
    else:
        sd = good.std(axis=0, ddof=1)
        center = np.array([point.effects.delta[g] for g in STRATA])
        lo = center - 1.959963984540054 * sd
        hi = center + 1.959963984540054 * sd

    point.effects = replace(
        point.effects,
        bootstrap_reps=reps,
        ci_lower={g: float(lo[stratum_index(g)]) for g in STRATA},
        ci_upper={g: float(hi[stratum_index(g)]) for g in STRATA},
        ci_method=config.ci_method,
        boot_failures=n_fail,
    )
    return point
