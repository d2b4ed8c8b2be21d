import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtr as scipy_ndtr

from proxistrata.errors import ConfigError, DomainError, NumericError
from proxistrata.numerics import (
    QuadratureRule,
    finite_diff_jacobian,
    gauss_hermite_rule,
    normal_probit_integral,
    std_normal_cdf,
    std_normal_pdf,
)

SQRT_2PI = np.sqrt(2.0 * np.pi)


class TestStdNormalCdf:
    def test_symmetry_point(self):
        assert std_normal_cdf(0.0) == pytest.approx(0.5, abs=1e-15)

    def test_upper_quantile(self):
        # 1.959963985 is the 97.5% point to ~5e-10
        assert std_normal_cdf(1.959963985) == pytest.approx(0.975, abs=1e-9)

    def test_deep_lower_tail(self):
        assert std_normal_cdf(-8.0) < 1e-14

    def test_matches_reference(self):
        xs = np.linspace(-37.0, 8.0, 4001)
        assert np.max(np.abs(std_normal_cdf(xs) - scipy_ndtr(xs))) <= 1e-12

    def test_rejects_non_finite(self):
        with pytest.raises(DomainError):
            std_normal_cdf(np.nan)
        with pytest.raises(DomainError):
            std_normal_cdf([0.0, np.inf])

    @given(st.floats(-30, 30))
    def test_reflection(self, x):
        assert abs(std_normal_cdf(x) + std_normal_cdf(-x) - 1.0) <= 1e-14

    @given(st.lists(st.floats(-20, 20), min_size=2, max_size=40))
    def test_monotone(self, xs):
        vals = std_normal_cdf(np.sort(np.asarray(xs)))
        assert np.all(np.diff(vals) >= 0.0)


class TestNormalProbitIntegral:
    def test_constant_integrand(self):
        assert normal_probit_integral(0.0, 0.0, 5.0, 2.0) == pytest.approx(0.5, abs=1e-15)

    def test_known_value(self):
        # Phi(1 / sqrt(1.25)), from the closed form
        got = normal_probit_integral(1.0, 0.5, 0.0, 1.0)
        assert got == pytest.approx(0.8144533152386513, abs=1e-12)

    @pytest.mark.parametrize("a,b,m,sigma", [
        (1.0, 0.5, 0.0, 1.0),
        (0.3, -0.7, 1.2, 0.5),
        (-2.0, 1.5, 0.4, 0.8),
    ])
    def test_matches_quadrature(self, a, b, m, sigma):
        rule = gauss_hermite_rule(64)
        oracle = rule.expectation(lambda w: scipy_ndtr(a + b * w), m, sigma)
        assert normal_probit_integral(a, b, m, sigma) == pytest.approx(oracle, abs=1e-10)

    def test_quadrature_agreement_on_grid(self):
        # the 64-node rule resolves the probit transition to 1e-8 only while
        # |b sigma| <~ 3 (node spacing vs transition width); the adaptive
        # oracle covers the whole grid
        from scipy.integrate import quad

        rng = np.random.default_rng(123)
        rule64 = gauss_hermite_rule(64)
        worst64 = worst_adaptive = 0.0
        for k in range(1000):
            a = rng.uniform(-3, 3)
            b = rng.uniform(-3, 3)
            m = rng.uniform(-3, 3)
            sigma = rng.uniform(0, 2)
            got = normal_probit_integral(a, b, m, sigma)
            if abs(b * sigma) <= 2.5:
                worst64 = max(worst64, abs(
                    got - rule64.expectation(lambda w: scipy_ndtr(a + b * w), m, sigma)))
            if k % 25 == 0:
                oracle, _ = quad(
                    lambda t: scipy_ndtr(a + b * (m + sigma * t)) * std_normal_pdf(t),
                    -12, 12, epsabs=1e-12, epsrel=1e-12, limit=200)
                worst_adaptive = max(worst_adaptive, abs(got - oracle))
        assert worst64 <= 1e-8
        assert worst_adaptive <= 1e-8

    def test_rejects_negative_sigma(self):
        with pytest.raises(DomainError):
            normal_probit_integral(0.0, 1.0, 0.0, -0.5)

    def test_rejects_non_finite(self):
        with pytest.raises(DomainError):
            normal_probit_integral(np.inf, 1.0, 0.0, 1.0)


class TestGaussHermite:
    def test_order_one(self):
        rule = gauss_hermite_rule(1)
        assert rule.nodes == pytest.approx([0.0], abs=1e-14)
        assert rule.weights == pytest.approx([1.0], abs=1e-14)

    def test_second_moment(self):
        rule = gauss_hermite_rule(20)
        assert rule.integrate(lambda x: x * x) == pytest.approx(1.0, abs=1e-10)

    def test_fourth_moment(self):
        rule = gauss_hermite_rule(20)
        assert rule.integrate(lambda x: x ** 4) == pytest.approx(3.0, abs=1e-9)

    @pytest.mark.parametrize("order", [2, 5, 8, 32, 64])
    def test_polynomial_exactness(self, order):
        # E[x^k] against the analytic double-factorial moments, up to degree
        # min(2*order - 1, 10)
        rule = gauss_hermite_rule(order)
        moment = {0: 1.0, 2: 1.0, 4: 3.0, 6: 15.0, 8: 105.0, 10: 945.0}
        for k in range(0, min(2 * order - 1, 10) + 1):
            expected = 0.0 if k % 2 else moment[k]
            assert rule.integrate(lambda x, k=k: x ** k) == pytest.approx(
                expected, abs=1e-9), f"degree {k} at order {order}"

    def test_weights_normalized_and_nodes_increasing(self):
        for order in (1, 3, 16, 256):
            rule = gauss_hermite_rule(order)
            assert abs(rule.weights.sum() - 1.0) <= 1e-12
            assert np.all(np.diff(rule.nodes) > 0.0) or order == 1

    @pytest.mark.parametrize("order", [0, -3, 257, 2.5, "8"])
    def test_rejects_bad_order(self, order):
        with pytest.raises(ConfigError):
            gauss_hermite_rule(order)

    def test_rule_invariants_enforced(self):
        with pytest.raises(ConfigError):
            QuadratureRule(nodes=np.array([0.0, 1.0]), weights=np.array([0.6, 0.6]), order=2)
        with pytest.raises(ConfigError):
            QuadratureRule(nodes=np.array([1.0, 0.0]), weights=np.array([0.5, 0.5]), order=2)


class TestFiniteDiffJacobian:
    def test_identity(self):
        x = np.array([0.3, -1.2, 2.0])
        jac = finite_diff_jacobian(lambda v: v, x)
        assert jac == pytest.approx(np.eye(3), abs=1e-9)

    def test_normal_density_as_derivative(self):
        jac = finite_diff_jacobian(lambda v: np.array([std_normal_cdf(v[0])]),
                                   np.array([0.0]), h=1e-5)
        assert jac[0, 0] == pytest.approx(1.0 / SQRT_2PI, abs=1e-8)

    def test_polynomial(self):
        def f(v):
            return np.array([v[0] * v[1], v[0] ** 2])

        jac = finite_diff_jacobian(f, np.array([2.0, 3.0]))
        assert jac == pytest.approx(np.array([[3.0, 2.0], [4.0, 0.0]]), abs=1e-7)

    def test_non_finite_reports_coordinate(self):
        def f(v):
            if v[1] > 0.5:
                return np.array([np.nan])
            return np.array([v[1]])

        with pytest.raises(NumericError) as err:
            finite_diff_jacobian(f, np.array([0.0, 0.5]))
        assert err.value.coordinate == 1


@settings(max_examples=50)
@given(st.floats(-5, 5), st.floats(-3, 3))
def test_pdf_is_cdf_derivative(x, _unused):
    h = 1e-6
    approx = (std_normal_cdf(x + h) - std_normal_cdf(x - h)) / (2 * h)
    assert approx == pytest.approx(std_normal_pdf(x), abs=1e-7)
