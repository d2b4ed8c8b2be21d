"""Data-generating process, analytic ground-truth oracles, and the Monte
Carlo replication harness producing bias/sd/coverage tables.

The generator draws covariates, a probit treatment, a jointly Gaussian
latent confounder and intermediate proxy (with the cross-coefficient
constraints that keep the proxy independent of treatment and exposure given
the confounder), an ordered-probit principal stratum, and Gaussian outcomes
for both treatment arms.
"""

import csv
import io
import multiprocessing as mp
import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtr

from . import estimation
from .data import STRATA, validate_dataset
from .errors import ConfigError, ProxistrataError, StudyError
from .numerics import normal_probit_integral

__all__ = [
    "DgpConfig",
    "LatentDataset",
    "generate",
    "derive_true_bridge",
    "true_psi",
    "oracle_true_effects",
    "run_study",
    "StudySummary",
    "dataset_to_csv",
]

_G_AT, _G_CO, _G_NT = 0, 1, 2  # stratum codes in STRATA order


@dataclass(frozen=True)
class DgpConfig:
    """Full generator parameterization; defaults are the benchmark settings.

    The cross-coefficients gamma_a, gamma_z, gamma_c2 are always derived:
    gamma_a = iota_a sigma_w rho2 / sigma_u and gamma_z likewise keep the
    intermediate proxy independent of (Z, A) given (U, C);
    gamma_c2 = iota_c2 sigma_w / (sigma_u rho2) keeps E(U | Z, A, W, C)
    linear in C.
    """

    # covariates (A, C)
    delta_a: float = 0.0
    delta_c: float = 0.0
    sigma_a: float = 0.5
    sigma_c: float = 0.5
    rho1: float = 0.5
    # treatment probit
    beta0: float = 0.0
    beta_a: float = 1.0
    beta_c: float = 1.0
    # latent confounder / intermediate proxy
    iota0: float = 1.0
    iota_z: float = 1.0
    iota_a: float = 1.5
    iota_c1: float = 1.5
    iota_c2: float = -0.75
    gamma0: float = 1.0
    gamma_c1: float = 1.5
    sigma_u: float = 0.5
    rho2: float = 0.5
    sigma_w: float = 0.5
    # ordered-probit stratum model (zeta1 is the log threshold gap)
    zeta0: float = 0.5
    zeta1: float = 0.0
    zeta_w: float = 0.5
    zeta_u: float = 0.2
    zeta_c: float = 1.0
    # outcome; intercepts indexed [z][stratum] in STRATA order (at, co, nt)
    intercepts_z0: tuple = (2.0, 1.0, 0.0)
    intercepts_z1: tuple = (4.0, 3.0, 2.0)
    theta_c: float = 1.0
    theta_a: float = 0.0
    theta_w: float = 0.0
    sigma_y: float = 0.5
    # sampling
    n: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not (abs(self.rho1) < 1.0):
            raise ConfigError("|rho1| must be < 1")
        if not (0.0 < self.rho2 < 1.0):
            raise ConfigError("rho2 must lie in (0, 1): the derived gamma_c2 divides by it")
        for name in ("sigma_a", "sigma_c", "sigma_u", "sigma_w", "sigma_y"):
            if not getattr(self, name) > 0.0:
                raise ConfigError(f"{name} must be positive")
        if self.n < 1:
            raise ConfigError("n must be >= 1")

    # derived cross-coefficients, never user-set
    @property
    def gamma_a(self):
        return self.iota_a * self.sigma_w * self.rho2 / self.sigma_u

    @property
    def gamma_z(self):
        return self.iota_z * self.sigma_w * self.rho2 / self.sigma_u

    @property
    def gamma_c2(self):
        return self.iota_c2 * self.sigma_w / (self.sigma_u * self.rho2)


@dataclass(frozen=True)
class LatentDataset:
    """Observed Dataset plus the latent quantities the oracles need."""

    data: object
    u: np.ndarray
    s0: np.ndarray
    s1: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    g: np.ndarray  # int codes, STRATA order: 0=always-taker, 1=complier, 2=never-taker

    def __post_init__(self):
        # monotonic potential values by construction: no (s0=1, s1=0) pattern
        if np.any((self.s0 == 1) & (self.s1 == 0)):
            raise StudyError("generator produced a defier")


def _rng(seed, *stream):
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, stream)]))


def generate(config, n=None, seed=None):
    """Draw a LatentDataset of n units exactly per the generator definition."""
    n = config.n if n is None else int(n)
    seed = config.seed if seed is None else seed
    rng = _rng(seed, 0)

    e1 = rng.standard_normal(n)
    e2 = rng.standard_normal(n)
    a = config.delta_a + config.sigma_a * e1
    c1 = config.delta_c + config.sigma_c * (
        config.rho1 * e1 + np.sqrt(1.0 - config.rho1 ** 2) * e2)

    pz = ndtr(config.beta0 + config.beta_a * a + config.beta_c * c1)
    z = (rng.random(n) < pz).astype(float)

    mu_u = (config.iota0 + config.iota_z * z + config.iota_a * a
            + config.iota_c1 * c1 + config.iota_c2 * c1 * c1)
    mu_w = (config.gamma0 + config.gamma_z * z + config.gamma_a * a
            + config.gamma_c1 * c1 + config.gamma_c2 * c1 * c1)
    g1 = rng.standard_normal(n)
    g2 = rng.standard_normal(n)
    u = mu_u + config.sigma_u * g1
    w = mu_w + config.sigma_w * (config.rho2 * g1 + np.sqrt(1.0 - config.rho2 ** 2) * g2)

    # ordered stratum draw: one uniform against the cumulative cell bounds;
    # the latent normal shock is never materialized
    g_dag = config.zeta0 + config.zeta_w * w + config.zeta_u * u + config.zeta_c * c1
    p_nt = ndtr(-g_dag)
    p_nt_co = ndtr(np.exp(config.zeta1) - g_dag)
    uu = rng.random(n)
    g = np.where(uu <= p_nt, _G_NT, np.where(uu <= p_nt_co, _G_CO, _G_AT)).astype(np.int8)

    s0 = (g == _G_AT).astype(float)
    s1 = (g != _G_NT).astype(float)
    s = z * s1 + (1.0 - z) * s0

    # shared outcome noise across arms: the per-stratum effect depends only
    # on marginal means, and coupling reduces oracle variance
    shared = config.theta_a * a + config.theta_w * w + config.theta_c * c1
    noise = config.sigma_y * rng.standard_normal(n)
    i0 = np.asarray(config.intercepts_z0, dtype=float)[g]
    i1 = np.asarray(config.intercepts_z1, dtype=float)[g]
    y0 = i0 + shared + noise
    y1 = i1 + shared + noise
    y = z * y1 + (1.0 - z) * y0

    data = validate_dataset(z=z, s=s, y=y, a=a, w=w, c=c1[:, None])
    return LatentDataset(data=data, u=u, s0=s0, s1=s1, y0=y0, y1=y1, g=g)


def _tau_coeffs(config):
    """Coefficients of E(W | Z, A, C, U) and its residual variance.

    The z and a terms vanish exactly under the derived gamma constraints.
    """
    tau0 = (config.gamma0 * config.sigma_u
            - config.iota0 * config.sigma_w * config.rho2) / config.sigma_u
    tau_c1 = (config.gamma_c1 * config.sigma_u
              - config.iota_c1 * config.sigma_w * config.rho2) / config.sigma_u
    tau_c2 = (config.gamma_c2 * config.sigma_u
              - config.iota_c2 * config.sigma_w * config.rho2) / config.sigma_u
    tau_u = config.sigma_w * config.rho2 / config.sigma_u
    sw2 = config.sigma_w ** 2 * (1.0 - config.rho2 ** 2)
    return tau0, tau_u, tau_c1, tau_c2, sw2


def derive_true_bridge(config):
    """Probit-bridge coefficients compatible with this generator.

    Matches the probit form of pr(S_t = 1 | U, C) against E{h(t, W, C) | U, C}
    coefficient by coefficient: the confounder equation pins alpha_w through a
    scalar root, the rest back-substitute linearly. Raises ConfigError when no
    real root exists (the generator is then incompatible with a probit bridge).
    """
    tau0, tau_u, tau_c1, tau_c2, sw2 = _tau_coeffs(config)
    d_z = np.sqrt(1.0 + config.zeta_w ** 2 * sw2)
    k_u = (config.zeta_u + config.zeta_w * tau_u) / d_z
    k_t = np.exp(config.zeta1) / d_z
    k_0 = (config.zeta0 + config.zeta_w * tau0 - np.exp(config.zeta1)) / d_z
    k_c = (config.zeta_c + config.zeta_w * tau_c1) / d_z
    k_cc = config.zeta_w * tau_c2 / d_z

    disc = tau_u ** 2 - k_u ** 2 * sw2
    if disc <= 0.0:
        raise ConfigError(
            "no real bridge slope: confounding too strong relative to the proxy "
            f"(tau_u^2 - K_u^2 Sigma_w^2 = {disc:.3e} <= 0)")
    a_w = k_u / np.sqrt(disc)
    d_a = np.sqrt(1.0 + a_w ** 2 * sw2)
    return np.array([
        k_0 * d_a - a_w * tau0,
        np.log(k_t * d_a),
        a_w,
        k_c * d_a - a_w * tau_c1,
        k_cc * d_a - a_w * tau_c2,
    ])


def bridge_grid_residual(config, alpha, u_grid=None, c_grid=None):
    """Worst-case defect of the bridge property
    |E{h(t, W, C; alpha) | U, C} - pr(S_t = 1 | U, C)| over a (t, u, c) grid."""
    tau0, tau_u, tau_c1, tau_c2, sw2 = _tau_coeffs(config)
    u_grid = np.linspace(-3.0, 5.0, 33) if u_grid is None else np.asarray(u_grid)
    c_grid = np.linspace(-2.0, 2.0, 33) if c_grid is None else np.asarray(c_grid)
    uu, cc = np.meshgrid(u_grid, c_grid, indexing="ij")
    m_w = tau0 + tau_u * uu + tau_c1 * cc + tau_c2 * cc * cc
    d_z = np.sqrt(1.0 + config.zeta_w ** 2 * sw2)
    worst = 0.0
    for t in (0, 1):
        lhs = normal_probit_integral(
            alpha[0] + np.exp(alpha[1]) * t + alpha[3] * cc + alpha[4] * cc * cc,
            alpha[2], m_w, np.sqrt(sw2))
        rhs = ndtr((config.zeta0 + config.zeta_w * tau0
                    - np.exp(config.zeta1) * (1 - t)
                    + (config.zeta_u + config.zeta_w * tau_u) * uu
                    + (config.zeta_c + config.zeta_w * tau_c1) * cc
                    + config.zeta_w * tau_c2 * cc * cc) / d_z)
        worst = max(worst, float(np.abs(lhs - rhs).max()))
    return worst


def true_psi(config):
    """Closed-form ordered-probit parameters implied by the generator, in
    the order (psi0, log-gap, psi_z, psi_w, psi_a, psi_c)."""
    su2 = config.sigma_u ** 2 * (1.0 - config.rho2 ** 2)
    nu0 = (config.iota0 * config.sigma_w
           - config.gamma0 * config.sigma_u * config.rho2) / config.sigma_w
    nu_z = (config.iota_z * config.sigma_w
            - config.gamma_z * config.sigma_u * config.rho2) / config.sigma_w
    nu_a = (config.iota_a * config.sigma_w
            - config.gamma_a * config.sigma_u * config.rho2) / config.sigma_w
    nu_c1 = (config.iota_c1 * config.sigma_w
             - config.gamma_c1 * config.sigma_u * config.rho2) / config.sigma_w
    nu_w = config.sigma_u * config.rho2 / config.sigma_w
    d = np.sqrt(1.0 + config.zeta_u ** 2 * su2)
    zu = config.zeta_u
    return np.array([
        (config.zeta0 + zu * nu0) / d,
        config.zeta1 - np.log(d),
        zu * nu_z / d,
        (config.zeta_w + zu * nu_w) / d,
        zu * nu_a / d,
        (zu * nu_c1 + config.zeta_c) / d,
    ])


def oracle_true_effects(config, n_mc=1_000_000, seed=202_406):
    """Monte Carlo ground truth for the per-stratum effects, with the
    Monte Carlo standard error of each mean."""
    if n_mc < 100_000:
        raise ConfigError("oracle needs n_mc >= 1e5")
    latent = generate(config, n=n_mc, seed=seed)
    diff = latent.y1 - latent.y0
    truth, mc_err = {}, {}
    for code, g in enumerate(STRATA):
        mask = latent.g == code
        count = int(mask.sum())
        if count < 100:
            raise StudyError(f"oracle stratum {g.label} has only {count} draws")
        vals = diff[mask]
        truth[g] = float(vals.mean())
        mc_err[g] = float(vals.std(ddof=1) / np.sqrt(count))
    return truth, mc_err


# ---------------------------------------------------------------------------
# replication harness


@dataclass
class StudySummary:
    """Bias / sd / coverage per stratum for one (n, zeta_u, case) cell."""

    n: int
    zeta_u: float
    case: str
    reps: int
    failures: int
    truth: dict
    bias: dict
    sd: dict
    cp: dict
    estimator: str = "bridge"
    mc_error: dict = field(default_factory=dict)

    CSV_COLUMNS = ("n", "zeta_u", "case", "stratum", "bias", "sd", "cp",
                   "reps", "failures")

    def rows(self):
        for g in STRATA:
            yield {
                "n": self.n,
                "zeta_u": self.zeta_u,
                "case": self.case,
                "stratum": g.label,
                "bias": self.bias[g],
                "sd": self.sd[g],
                "cp": self.cp[g],
                "reps": self.reps,
                "failures": self.failures,
            }

    def to_csv_string(self):
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=self.CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows():
            writer.writerow({k: _csv_format(v) for k, v in row.items()})
        return buf.getvalue()


def _csv_format(v):
    # repr is the shortest representation that round-trips exactly
    if isinstance(v, float):
        return repr(v)
    return v


def _replicate(args):
    dgp_config, est_config, rep_seed, index = args
    latent = generate(dgp_config, seed=rep_seed)
    est = replace(est_config, seed=rep_seed)
    fit = estimation.bootstrap(latent.data, est)
    eff = fit.effects
    out = {"index": index}
    for g in STRATA:
        out[g] = (eff.delta[g],
                  eff.ci_lower[g] if eff.ci_lower else None,
                  eff.ci_upper[g] if eff.ci_upper else None)
    return out


def run_study(dgp_config, est_config, reps, master_seed, workers=None,
              oracle_n_mc=1_000_000):
    """Replicate the full pipeline ``reps`` times and summarize bias, the
    empirical sd across replications, and CI coverage against the oracle
    truth. Replication seeds derive deterministically from the master seed,
    so results are identical under any worker count."""
    if reps < 2:
        raise ConfigError("reps must be >= 2")
    truth, mc_err = oracle_true_effects(dgp_config, n_mc=oracle_n_mc,
                                        seed=master_seed + 881_207)

    tasks = [
        (dgp_config, est_config,
         int(_rng(master_seed, 1, r).integers(0, 2 ** 62)), r)
        for r in range(reps)
    ]
    results = [None] * reps
    failures = 0
    failure_msgs = []

    def _store(out):
        results[out["index"]] = out

    n_workers = workers if workers is not None else (os.cpu_count() or 1)
    n_workers = max(1, min(int(n_workers), reps))
    if n_workers == 1:
        for task in tasks:
            try:
                _store(_replicate(task))
            except (ProxistrataError, np.linalg.LinAlgError) as exc:
                failures += 1
                failure_msgs.append(str(exc))
    else:
        with mp.get_context("fork").Pool(processes=n_workers) as pool:
            for out in pool.imap_unordered(_replicate_safe, tasks, chunksize=4):
                if out.get("error") is not None:
                    failures += 1
                    failure_msgs.append(out["error"])
                else:
                    _store(out)

    if failures > 0.05 * reps:
        raise StudyError(
            f"{failures}/{reps} replications failed; first errors: {failure_msgs[:3]}")

    bias, sd, cp = {}, {}, {}
    for g in STRATA:
        vals = np.array([r[g][0] for r in results if r is not None])
        bias[g] = float(vals.mean() - truth[g])
        sd[g] = float(vals.std(ddof=1))
        if est_config.bootstrap_reps > 0:
            cover = [
                (r[g][1] <= truth[g] <= r[g][2])
                for r in results if r is not None
            ]
            cp[g] = float(np.mean(cover))
        else:
            cp[g] = float("nan")

    return StudySummary(
        n=dgp_config.n, zeta_u=dgp_config.zeta_u,
        case=est_config.outcome_case.value, reps=reps, failures=failures,
        truth={g: truth[g] for g in STRATA}, bias=bias, sd=sd, cp=cp,
        estimator=est_config.estimator,
        mc_error={g: mc_err[g] for g in STRATA},
    )


def _replicate_safe(args):
    try:
        return _replicate(args)
    except (ProxistrataError, np.linalg.LinAlgError) as exc:
        return {"index": args[3], "error": f"{type(exc).__name__}: {exc}"}


def dataset_to_csv(data, path_or_buf):
    """Write a dataset in the interchange schema: header z,s,y,a,w,c1..cp;
    floats carry full round-trip precision."""
    own = isinstance(path_or_buf, (str, os.PathLike))
    handle = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        cols = ["z", "s", "y", "a", "w"] + [f"c{j + 1}" for j in range(data.p)]
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(cols)
        for i in range(data.n):
            row = [int(data.z[i]), int(data.s[i]),
                   repr(float(data.y[i])), repr(float(data.a[i])),
                   repr(float(data.w[i]))]
            row += [repr(float(data.c[i, j])) for j in range(data.p)]
            writer.writerow(row)
    finally:
        if own:
            handle.close()
