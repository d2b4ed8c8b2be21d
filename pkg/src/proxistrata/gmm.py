"""Generic method-of-moments engine.

A MomentProblem maps a parameter vector to the n x q matrix of per-unit
moments. ``solve`` finds a root of the sample means when the system is
exactly identified (q = k) and minimizes the quadratic form g' W g otherwise;
``two_step`` re-solves under the inverse moment-covariance weight. All the
moment systems in this package are smooth and low dimensional, so the solver
is a damped Newton / Gauss-Newton iteration with jittered restarts.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError
from .numerics import finite_diff_jacobian

__all__ = ["MomentProblem", "GmmOptions", "GmmSolution", "solve", "two_step"]


@dataclass
class MomentProblem:
    """Moment system definition.

    moment_fn : params (k,) -> (n, q) per-unit moment matrix
    init : (k,) starting values
    dim_moment : q; must be >= k
    jacobian_fn : optional analytic Jacobian of the mean moments, (k,) -> (q, k)
    weight : optional symmetric PSD (q, q) weight for the over-identified case
    """

    moment_fn: callable
    init: np.ndarray
    dim_moment: int
    jacobian_fn: callable = None
    weight: np.ndarray = None

    @property
    def dim_param(self):
        return np.asarray(self.init).size

    def mean_moments(self, params):
        return np.asarray(self.moment_fn(params)).mean(axis=0)


@dataclass
class GmmOptions:
    tol: float = 1e-8          # moment inf-norm (exactly identified) / gradient inf-norm
    max_iter: int = 200        # Newton iterations per start
    n_starts: int = 5          # jittered restarts when a start fails to converge
    jitter: float = 0.5
    seed: int = 0
    max_backtracks: int = 30


@dataclass
class GmmSolution:
    params: np.ndarray
    objective: float
    converged: bool
    iterations: int
    moment_norm: float
    diagnostics: dict = field(default_factory=dict)


def _jacobian(problem, params):
    if problem.jacobian_fn is not None:
        return np.asarray(problem.jacobian_fn(params), dtype=float)
    return finite_diff_jacobian(problem.mean_moments, params)


def _solve_damped(mat, rhs):
    """Solve mat x = rhs, escalating ridge damping if the system is singular."""
    lam = 0.0
    scale = max(1.0, float(np.abs(np.diag(mat)).max()))
    for _ in range(8):
        try:
            x = np.linalg.solve(mat + lam * np.eye(mat.shape[0]), rhs)
            if np.all(np.isfinite(x)):
                return x
        except np.linalg.LinAlgError:
            pass
        lam = 1e-10 * scale if lam == 0.0 else lam * 100.0
    raise NumericError("linear solve failed even with ridge damping")


def _newton_root(problem, start, options):
    """Damped Newton on the mean moments; line search on ||g||^2."""
    theta = np.asarray(start, dtype=float).copy()
    g = problem.mean_moments(theta)
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite moments at start", params=theta.copy())
    sq = float(g @ g)
    it = 0
    for it in range(1, options.max_iter + 1):
        if np.abs(g).max() <= options.tol:
            return theta, g, True, it - 1
        jac = _jacobian(problem, theta)
        step = _solve_damped(jac, g)
        t = 1.0
        for _ in range(options.max_backtracks):
            trial = theta - t * step
            g_trial = problem.mean_moments(trial)
            if np.all(np.isfinite(g_trial)) and float(g_trial @ g_trial) < sq:
                theta, g, sq = trial, g_trial, float(g_trial @ g_trial)
                break
            t *= 0.5
        else:
            # no descent: stuck at a stationary point of ||g||^2
            return theta, g, bool(np.abs(g).max() <= options.tol), it
    return theta, g, bool(np.abs(g).max() <= options.tol), it


def _gauss_newton(problem, start, weight, options):
    """Gauss-Newton minimization of g' W g.

    Converged means the gradient inf-norm is within tolerance, or the
    moments themselves are (a root is a global minimum regardless of the
    weight's scale).
    """
    theta = np.asarray(start, dtype=float).copy()
    g = problem.mean_moments(theta)
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite moments at start", params=theta.copy())

    def _done(g_vec, grad):
        return np.abs(g_vec).max() <= options.tol or np.abs(grad).max() <= options.tol

    obj = float(g @ weight @ g)
    it = 0
    for it in range(1, options.max_iter + 1):
        jac = _jacobian(problem, theta)
        grad = 2.0 * jac.T @ (weight @ g)
        if _done(g, grad):
            return theta, g, True, it - 1
        step = _solve_damped(jac.T @ weight @ jac, jac.T @ (weight @ g))
        t = 1.0
        accepted = False
        for _ in range(options.max_backtracks):
            trial = theta - t * step
            g_trial = problem.mean_moments(trial)
            if np.all(np.isfinite(g_trial)):
                obj_trial = float(g_trial @ weight @ g_trial)
                if obj_trial < obj:
                    theta, g, obj, accepted = trial, g_trial, obj_trial, True
                    break
            t *= 0.5
        if not accepted:
            jac = _jacobian(problem, theta)
            grad = 2.0 * jac.T @ (weight @ g)
            return theta, g, bool(_done(g, grad)), it
    jac = _jacobian(problem, theta)
    grad = 2.0 * jac.T @ (weight @ g)
    return theta, g, bool(_done(g, grad)), it


def solve(problem, options=None):
    """Find parameters zeroing the sample moments (q = k) or minimizing the
    GMM quadratic form (q > k), retrying from jittered starts on failure."""
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return _solve_impl(problem, options)


def _solve_impl(problem, options):
    options = options or GmmOptions()
    k = problem.dim_param
    q = problem.dim_moment
    exactly_identified = q == k
    weight = problem.weight if problem.weight is not None else np.eye(q)

    rng = np.random.default_rng(options.seed)
    start = np.asarray(problem.init, dtype=float)
    best = None
    total_iter = 0
    for attempt in range(max(1, options.n_starts)):
        if exactly_identified:
            theta, g, ok, its = _newton_root(problem, start, options)
            obj = float(g @ g)
        else:
            theta, g, ok, its = _gauss_newton(problem, start, weight, options)
            obj = float(g @ weight @ g)
        total_iter += its
        cand = GmmSolution(
            params=theta,
            objective=obj,
            converged=ok,
            iterations=total_iter,
            moment_norm=float(np.abs(g).max()),
            diagnostics={"starts_used": attempt + 1},
        )
        if best is None or (cand.converged and not best.converged) or (
            cand.converged == best.converged and cand.objective < best.objective
        ):
            best = cand
        if cand.converged:
            break
        init = np.asarray(problem.init, dtype=float)
        start = init + options.jitter * (1.0 + np.abs(init)) * rng.standard_normal(k)
    best.iterations = total_iter
    return best


def _moment_covariance(problem, params, ridge_floor=1e-8):
    """Outer-product covariance of the per-unit moments, ridge-regularized
    when (numerically) singular."""
    g_units = np.asarray(problem.moment_fn(params), dtype=float)
    n = g_units.shape[0]
    omega = g_units.T @ g_units / n
    diagnostics = {}
    try:
        np.linalg.cholesky(omega)
    except np.linalg.LinAlgError:
        lam = ridge_floor * np.trace(omega) / omega.shape[0]
        lam = max(lam, ridge_floor)
        omega = omega + lam * np.eye(omega.shape[0])
        diagnostics["covariance_ridge"] = lam
    return omega, diagnostics


def two_step(problem, options=None):
    """Two-step GMM: identity-weight solve, then re-solve under the inverse
    of the estimated moment covariance. Exactly identified problems reduce to
    ``solve`` (the weight is irrelevant at a root)."""
    options = options or GmmOptions()
    if problem.dim_moment == problem.dim_param:
        return solve(problem, options)

    step1_problem = MomentProblem(
        moment_fn=problem.moment_fn,
        init=problem.init,
        dim_moment=problem.dim_moment,
        jacobian_fn=problem.jacobian_fn,
        weight=np.eye(problem.dim_moment),
    )
    step1 = solve(step1_problem, options)
    if step1.converged and step1.moment_norm <= options.tol:
        # an exact root of the over-identified system: reweighting is moot
        # and the moment covariance is degenerate there
        step1.diagnostics["exact_root"] = True
        return step1

    omega, ridge_diag = _moment_covariance(problem, step1.params)
    try:
        weight2 = np.linalg.inv(omega)
    except np.linalg.LinAlgError:
        lam = 1e-8 * np.trace(omega) / omega.shape[0]
        weight2 = np.linalg.inv(omega + lam * np.eye(omega.shape[0]))
        ridge_diag["inverse_ridge"] = lam
    weight2 = 0.5 * (weight2 + weight2.T)

    step2_problem = MomentProblem(
        moment_fn=problem.moment_fn,
        init=step1.params,
        dim_moment=problem.dim_moment,
        jacobian_fn=problem.jacobian_fn,
        weight=weight2,
    )
    step2 = solve(step2_problem, options)
    step2.diagnostics.update(ridge_diag)
    step2.diagnostics["step1_objective"] = step1.objective
    step2.diagnostics["step1_converged"] = step1.converged
    step2.diagnostics["weight"] = weight2
    return step2
