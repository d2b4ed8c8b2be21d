import numpy as np
import pytest
from scipy.special import ndtr

from proxistrata import gmm
from proxistrata.errors import NumericError
from proxistrata.numerics import finite_diff_jacobian, std_normal_pdf


def _problem(moment_fn, init, q, jac=None, weight=None):
    return gmm.MomentProblem(moment_fn=moment_fn, init=np.asarray(init, dtype=float),
                             dim_moment=q, jacobian_fn=jac, weight=weight)


class TestSolveExactlyIdentified:
    def test_constant_shift(self):
        sol = gmm.solve(_problem(lambda t: np.full((10, 1), t[0] - 3.0), [0.0], 1))
        assert sol.converged
        assert sol.params[0] == pytest.approx(3.0, abs=1e-8)

    def test_sample_mean(self):
        x = np.array([1.0, 2.0, 3.0])
        sol = gmm.solve(_problem(lambda t: (x - t[0])[:, None], [0.0], 1))
        assert sol.params[0] == pytest.approx(2.0, abs=1e-10)
        assert sol.moment_norm <= 1e-8

    def test_probit_score_matches_grid_search(self):
        # brute-force likelihood grid oracle on a 200-row synthetic sample
        rng = np.random.default_rng(2024)
        n = 200
        x = rng.standard_normal(n)
        design = np.column_stack([np.ones(n), x])
        truth = np.array([0.4, -0.8])
        y = (rng.random(n) < ndtr(design @ truth)).astype(float)

        def loglik(b0, b1):
            eta = b0 + b1 * x
            p = np.clip(ndtr(eta), 1e-12, 1 - 1e-12)
            return np.sum(y * np.log(p) + (1 - y) * np.log(1 - p))

        # coarse-to-fine grid search, final resolution 2e-5
        lo = np.array([-2.0, -2.0])
        hi = np.array([2.0, 2.0])
        for _ in range(6):
            g0 = np.linspace(lo[0], hi[0], 41)
            g1 = np.linspace(lo[1], hi[1], 41)
            ll = np.array([[loglik(b0, b1) for b1 in g1] for b0 in g0])
            i, j = np.unravel_index(np.argmax(ll), ll.shape)
            span0 = (hi[0] - lo[0]) / 8
            span1 = (hi[1] - lo[1]) / 8
            lo = np.array([g0[i] - span0, g1[j] - span1])
            hi = np.array([g0[i] + span0, g1[j] + span1])
        grid_mle = (lo + hi) / 2

        def score_moments(b):
            eta = design @ b
            p = np.clip(ndtr(eta), 1e-12, 1 - 1e-12)
            r = std_normal_pdf(eta) * (y - p) / (p * (1 - p))
            return design * r[:, None]

        sol = gmm.solve(_problem(score_moments, [0.0, 0.0], 2))
        assert sol.converged
        assert sol.params == pytest.approx(grid_mle, abs=1e-4)

    def test_moment_scale_equivariance(self):
        x = np.linspace(-1, 2, 30)

        def moments(scale):
            return lambda t: scale * np.column_stack([x - t[0], x * (x - t[0]) - t[1]])

        sol1 = gmm.solve(_problem(moments(1.0), [0.0, 0.0], 2))
        sol2 = gmm.solve(_problem(moments(7.5), [0.0, 0.0], 2))
        assert sol1.converged and sol2.converged
        assert sol1.params == pytest.approx(sol2.params, abs=1e-10)

    def test_non_finite_at_start_raises(self):
        def moments(t):
            return np.full((5, 1), np.nan)

        with pytest.raises(NumericError) as err:
            gmm.solve(_problem(moments, [1.0], 1))
        assert err.value.params is not None

    def test_max_iterations_reported_not_silent(self):
        # no root exists: moments bounded away from zero
        sol = gmm.solve(_problem(lambda t: np.full((4, 1), 1.0 + t[0] ** 2), [0.0], 1),
                        gmm.GmmOptions(max_iter=20, n_starts=2))
        assert not sol.converged


class TestJacobians:
    def test_analytic_matches_finite_difference(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal(60)
        q = np.column_stack([np.ones(60), x, x ** 2])

        def moment_fn(t):
            resid = np.sin(t[0]) + x * t[1] - x ** 2
            return q * resid[:, None]

        def jac_fn(t):
            cols = np.column_stack([np.full(60, np.cos(t[0])), x])
            return q.T @ cols / 60

        prob = _problem(moment_fn, [0.3, -0.7], 3, jac=jac_fn)
        jac_a = jac_fn(prob.init)
        jac_fd = finite_diff_jacobian(prob.mean_moments, prob.init)
        assert jac_a == pytest.approx(jac_fd, rel=1e-5, abs=1e-8)


class TestTwoStep:
    def _linear_overidentified(self, seed=0):
        rng = np.random.default_rng(seed)
        n = 400
        x = rng.standard_normal(n)
        q = np.column_stack([np.ones(n), x, x ** 2, np.abs(x)])
        theta_true = np.array([1.0, -2.0])
        design = np.column_stack([np.ones(n), x])
        y = design @ theta_true + rng.standard_normal(n) * (0.5 + 0.5 * np.abs(x))

        def moment_fn(t):
            return q * (y - design @ t)[:, None]

        return moment_fn, design, q, y

    def test_reduces_to_solve_when_exactly_identified(self):
        x = np.array([1.0, 2.0, 3.0, 4.0])
        prob = _problem(lambda t: (x - t[0])[:, None], [0.0], 1)
        assert gmm.two_step(prob).params == pytest.approx(
            gmm.solve(prob).params, abs=1e-12)

    def test_matches_gls_closed_form(self):
        moment_fn, design, q, y = self._linear_overidentified()
        prob = _problem(moment_fn, [0.0, 0.0], 4)
        sol = gmm.two_step(prob)
        assert sol.converged

        # closed-form two-step GMM: step-1 = (A'A)^-1 A'b with A = q'design/n,
        # b = q'y/n; reweight by the inverse moment covariance at step 1
        n = design.shape[0]
        a_mat = q.T @ design / n
        b_vec = q.T @ y / n
        step1 = np.linalg.lstsq(a_mat, b_vec, rcond=None)[0]
        g_units = q * (y - design @ step1)[:, None]
        omega = g_units.T @ g_units / n
        w2 = np.linalg.inv(omega)
        oracle = np.linalg.solve(a_mat.T @ w2 @ a_mat, a_mat.T @ w2 @ b_vec)
        assert sol.params == pytest.approx(oracle, abs=1e-6)

    def test_step2_objective_not_worse_under_step2_weight(self):
        moment_fn, design, q, y = self._linear_overidentified(seed=3)
        prob = _problem(moment_fn, [0.0, 0.0], 4)
        sol = gmm.two_step(prob)
        w2 = sol.diagnostics["weight"]
        step1 = gmm.solve(_problem(moment_fn, [0.0, 0.0], 4, weight=np.eye(4)))
        g1 = prob.mean_moments(step1.params)
        g2 = prob.mean_moments(sol.params)
        assert g2 @ w2 @ g2 <= g1 @ w2 @ g1 + 1e-12

    def test_exact_root_shortcut(self):
        # over-identified but exactly solvable: reweighting is skipped
        x = np.linspace(-2, 2, 50)
        design = np.column_stack([np.ones(50), x])
        y = design @ np.array([0.5, 1.5])
        q = np.column_stack([np.ones(50), x, x ** 2])
        prob = _problem(lambda t: q * (y - design @ t)[:, None], [0.0, 0.0], 3)
        sol = gmm.two_step(prob)
        assert sol.converged
        assert sol.moment_norm <= 1e-8
        assert sol.diagnostics.get("exact_root") is True

    def test_multistart_recovers_from_bad_init(self):
        # probit score from a saturated start: the surface is near-flat
        # there, so restarts with jitter have to find the basin. The score
        # uses the log-cdf form so saturation never fakes a root.
        from scipy.special import log_ndtr

        rng = np.random.default_rng(8)
        n = 150
        x = rng.standard_normal(n)
        design = np.column_stack([np.ones(n), x])
        y = (rng.random(n) < ndtr(design @ np.array([0.2, 1.0]))).astype(float)

        def score_moments(b):
            eta = design @ b
            log_phi = -0.5 * eta * eta - 0.5 * np.log(2 * np.pi)
            ratio1 = np.exp(log_phi - log_ndtr(eta))     # phi/Phi(eta)
            ratio0 = np.exp(log_phi - log_ndtr(-eta))    # phi/Phi(-eta)
            return design * (y * ratio1 - (1 - y) * ratio0)[:, None]

        good = gmm.solve(_problem(score_moments, [0.0, 0.0], 2))
        bad_start = gmm.solve(_problem(score_moments, [25.0, -25.0], 2),
                              gmm.GmmOptions(n_starts=10, jitter=1.0, seed=3))
        assert good.converged and bad_start.converged
        assert bad_start.params == pytest.approx(good.params, abs=1e-6)
