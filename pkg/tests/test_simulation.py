import io

import numpy as np
import pytest

from proxistrata.data import STRATA, Stratum
from proxistrata.errors import ConfigError, StudyError
from proxistrata.estimation import EstimationConfig, fit_bridge
from proxistrata.models import OutcomeCase
from proxistrata.numerics import normal_probit_integral
from proxistrata.simulation import (
    DgpConfig,
    StudySummary,
    bridge_grid_residual,
    dataset_to_csv,
    derive_true_bridge,
    generate,
    oracle_true_effects,
    run_study,
    true_psi,
)


class TestDgpConfig:
    def test_derived_coefficients(self):
        cfg = DgpConfig()
        assert cfg.gamma_a == pytest.approx(0.75)
        assert cfg.gamma_z == pytest.approx(0.5)
        assert cfg.gamma_c2 == pytest.approx(-1.5)

    def test_rho2_zero_rejected(self):
        with pytest.raises(ConfigError, match="rho2"):
            DgpConfig(rho2=0.0)

    def test_rho1_bound(self):
        with pytest.raises(ConfigError):
            DgpConfig(rho1=1.0)

    def test_sigma_positive(self):
        with pytest.raises(ConfigError):
            DgpConfig(sigma_w=0.0)


class TestGenerate:
    def test_no_defiers(self, bench_latent):
        assert not np.any((bench_latent.s0 == 1) & (bench_latent.s1 == 0))

    def test_consistency_of_observables(self, bench_latent):
        lat = bench_latent
        data = lat.data
        assert np.all(data.s == data.z * lat.s1 + (1 - data.z) * lat.s0)
        assert np.allclose(data.y, data.z * lat.y1 + (1 - data.z) * lat.y0)

    def test_covariate_correlation(self):
        lat = generate(DgpConfig(n=1_000_000, zeta_u=0.2, seed=4))
        corr = np.corrcoef(lat.data.a, lat.data.c[:, 0])[0, 1]
        assert corr == pytest.approx(0.5, abs=0.01)

    def test_balanced_treatment_at_origin(self):
        lat = generate(DgpConfig(n=1_000_000, zeta_u=0.2, seed=4))
        near = (np.abs(lat.data.a) < 0.1) & (np.abs(lat.data.c[:, 0]) < 0.1)
        assert lat.data.z[near].mean() == pytest.approx(0.5, abs=0.02)

    def test_proxy_independent_of_treatment_given_confounder(self):
        # partial correlation of W with (Z, A) given (U, C) vanishes by the
        # derived gamma constraints
        lat = generate(DgpConfig(n=1_000_000, zeta_u=0.3, seed=9))
        d = lat.data
        basis = np.column_stack([np.ones(d.n), lat.u, d.c, d.c ** 2])
        coef_w, *_ = np.linalg.lstsq(basis, d.w, rcond=None)
        w_resid = d.w - basis @ coef_w
        for other in (d.z, d.a):
            coef_o, *_ = np.linalg.lstsq(basis, other, rcond=None)
            o_resid = other - basis @ coef_o
            assert abs(np.corrcoef(w_resid, o_resid)[0, 1]) <= 0.01

    def test_deterministic_given_seed(self):
        cfg = DgpConfig(n=500, seed=123)
        a = generate(cfg)
        b = generate(cfg)
        assert np.array_equal(a.data.y, b.data.y)
        assert np.array_equal(a.g, b.g)

    def test_stratum_draw_matches_ordered_probabilities(self):
        # empirical stratum shares against the analytic cell probabilities
        cfg = DgpConfig(n=400_000, zeta_u=0.2, seed=17)
        lat = generate(cfg)
        from scipy.special import ndtr
        g_dag = cfg.zeta0 + cfg.zeta_w * lat.data.w + cfg.zeta_u * lat.u \
            + cfg.zeta_c * lat.data.c[:, 0]
        p_nt = ndtr(-g_dag).mean()
        p_at = ndtr(g_dag - np.exp(cfg.zeta1)).mean()
        assert (lat.g == 2).mean() == pytest.approx(p_nt, abs=0.005)
        assert (lat.g == 0).mean() == pytest.approx(p_at, abs=0.005)


class TestDeriveTrueBridge:
    def test_no_confounding_degenerates_to_strata_slope(self):
        cfg = DgpConfig(zeta_u=0.0)
        alpha = derive_true_bridge(cfg)
        assert alpha[2] == pytest.approx(cfg.zeta_w, abs=1e-12)

    @pytest.mark.parametrize("zeta_u", [0.0, 0.1, 0.2, 0.3, 0.4, 0.5])
    def test_defining_property_on_grid(self, zeta_u):
        cfg = DgpConfig(zeta_u=zeta_u)
        alpha = derive_true_bridge(cfg)
        assert bridge_grid_residual(cfg, alpha) <= 1e-8

    def test_grid_residual_uses_integral_identity(self):
        # the same residual evaluated through the quadrature-free identity
        cfg = DgpConfig(zeta_u=0.2)
        alpha = derive_true_bridge(cfg)
        val = normal_probit_integral(alpha[0] + np.exp(alpha[1]), alpha[2], 0.75, 0.4)
        assert 0.0 < val < 1.0

    def test_large_sample_recovery(self):
        cfg = DgpConfig(n=200_000, zeta_u=0.2, seed=51)
        alpha_star = derive_true_bridge(cfg)
        lat = generate(cfg)
        fit = fit_bridge(lat.data, EstimationConfig(seed=0))
        assert np.abs(fit.params - alpha_star).max() <= 0.08

    def test_consistency_sweep(self):
        # median error decreases monotonically across n
        cfg = DgpConfig(zeta_u=0.2)
        alpha_star = derive_true_bridge(cfg)
        medians = []
        for n in (2000, 8000, 32000):
            errs = []
            for seed in range(20):
                lat = generate(cfg, n=n, seed=1000 + seed)
                fit = fit_bridge(lat.data, EstimationConfig(seed=seed))
                errs.append(np.abs(fit.params - alpha_star).max())
            medians.append(np.median(errs))
        assert medians[0] > medians[1] > medians[2]

    def test_true_psi_calibration(self):
        # the closed-form ordered-probit parameters predict the latent
        # potential values
        cfg = DgpConfig(n=400_000, zeta_u=0.5, seed=5)
        lat = generate(cfg)
        psi = true_psi(cfg)
        from scipy.special import ndtr
        lp = psi[0] + psi[2] * lat.data.z + psi[3] * lat.data.w \
            + psi[4] * lat.data.a + lat.data.c[:, 0] * psi[5]
        assert abs(ndtr(lp).mean() - lat.s1.mean()) <= 0.005
        assert abs(ndtr(lp - np.exp(psi[1])).mean() - lat.s0.mean()) <= 0.005


class TestOracleTrueEffects:
    def test_shared_slopes_give_intercept_gaps(self):
        truth, mc_err = oracle_true_effects(DgpConfig(zeta_u=0.2), n_mc=200_000, seed=3)
        for g in STRATA:
            assert truth[g] == pytest.approx(2.0, abs=max(3 * mc_err[g], 1e-12))

    def test_perturbed_intercept(self):
        cfg = DgpConfig(zeta_u=0.2, intercepts_z1=(5.0, 3.0, 2.0))
        truth, _ = oracle_true_effects(cfg, n_mc=200_000, seed=3)
        assert truth[Stratum.ALWAYS_TAKER] == pytest.approx(3.0, abs=0.01)
        assert truth[Stratum.COMPLIER] == pytest.approx(2.0, abs=0.01)

    def test_rejects_tiny_mc(self):
        with pytest.raises(ConfigError):
            oracle_true_effects(DgpConfig(), n_mc=10_000)


class TestRunStudy:
    def test_reps_floor(self):
        with pytest.raises(ConfigError, match="reps"):
            run_study(DgpConfig(n=200), EstimationConfig(), reps=1, master_seed=0)

    def test_small_study_summary(self):
        dgp = DgpConfig(n=400, zeta_u=0.2, seed=0)
        ec = EstimationConfig(outcome_case=OutcomeCase.I, bootstrap_reps=0, seed=0)
        summ = run_study(dgp, ec, reps=5, master_seed=7, workers=1,
                         oracle_n_mc=100_000)
        assert summ.reps == 5
        assert summ.failures == 0
        for g in STRATA:
            assert np.isfinite(summ.bias[g])
            assert summ.sd[g] > 0.0
            assert np.isnan(summ.cp[g])  # no bootstrap -> no coverage

    def test_deterministic_summary(self):
        dgp = DgpConfig(n=400, zeta_u=0.2, seed=0)
        ec = EstimationConfig(outcome_case=OutcomeCase.I, bootstrap_reps=10, seed=0)
        s1 = run_study(dgp, ec, reps=4, master_seed=3, workers=1, oracle_n_mc=100_000)
        s2 = run_study(dgp, ec, reps=4, master_seed=3, workers=1, oracle_n_mc=100_000)
        assert s1.to_csv_string() == s2.to_csv_string()

    def test_csv_layout(self):
        summ = StudySummary(
            n=100, zeta_u=0.2, case="i", reps=2, failures=0,
            truth={g: 2.0 for g in STRATA},
            bias={g: 0.01 for g in STRATA},
            sd={g: 0.1 for g in STRATA},
            cp={g: 0.95 for g in STRATA})
        text = summ.to_csv_string()
        lines = text.strip().split("\n")
        assert lines[0] == "n,zeta_u,case,stratum,bias,sd,cp,reps,failures"
        assert len(lines) == 4
        assert lines[1].startswith("100,0.2,i,always_taker,")


class TestDatasetCsv:
    def test_round_trip_precision(self, bench_latent, tmp_path):
        path = tmp_path / "d.csv"
        dataset_to_csv(bench_latent.data, path)
        raw = np.genfromtxt(path, delimiter=",", names=True)
        assert np.array_equal(raw["y"], bench_latent.data.y)
        assert np.array_equal(raw["w"], bench_latent.data.w)
        assert np.array_equal(raw["c1"], bench_latent.data.c[:, 0])

    def test_header(self, tiny_dataset):
        buf = io.StringIO()
        dataset_to_csv(tiny_dataset, buf)
        assert buf.getvalue().splitlines()[0] == "z,s,y,a,w,c1"
