import numpy as np
import pytest

from tvshrink.bekk import BekkParams, SimConfig, simulate
from tvshrink.garch import _objective_and_grad, fit_garch, fit_garch_pooled


def _simulate_garch(a, b, sbar2, n, seed):
    rng = np.random.default_rng(seed)
    r = np.empty(n)
    sig2 = sbar2
    for t in range(n):
        r[t] = np.sqrt(sig2) * rng.standard_normal()
        sig2 = (1 - a - b) * sbar2 + a * r[t] ** 2 + b * sig2
    return r


def test_objective_gradient_matches_finite_differences():
    r = _simulate_garch(0.1, 0.7, 1.5, 400, 0)
    r2 = r * r
    theta = np.array([0.08, 0.72, 1.3])
    _, grad = _objective_and_grad(theta, r2, float(np.var(r)))
    eps = 1e-7
    for j in range(3):
        tp = theta.copy()
        tp[j] += eps
        tm = theta.copy()
        tm[j] -= eps
        fd = (_objective_and_grad(tp, r2, float(np.var(r)))[0]
              - _objective_and_grad(tm, r2, float(np.var(r)))[0]) / (2 * eps)
        assert grad[j] == pytest.approx(fd, rel=1e-5, abs=1e-7)


class TestFitGarch:
    def test_output_in_feasible_set(self):
        r = _simulate_garch(0.3, 0.6, 2.0, 300, 1)
        fit = fit_garch(r, delta=0.01)
        assert 0.0 <= fit.a_hat <= 1.0
        assert 0.0 <= fit.b_hat <= 1.0
        assert fit.a_hat + fit.b_hat <= 0.99 + 1e-12
        assert 0.01 <= fit.sigma_bar2_hat <= 10 * np.var(r) + 1e-12

    def test_objective_not_worse_than_reference_point(self):
        r = _simulate_garch(0.05, 0.9, 1.0, 500, 2)
        fit = fit_garch(r)
        ref = _objective_and_grad(np.array([0.01, 0.01, float(np.var(r))]), r * r, float(np.var(r)))[0]
        assert fit.neg_log_lik <= ref + 1e-12

    def test_iid_series_recovers_variance(self):
        rng = np.random.default_rng(3)
        r = np.sqrt(2.5) * rng.standard_normal(10_000)
        fit = fit_garch(r)
        assert abs(fit.sigma_bar2_hat - 2.5) < 0.15
        assert fit.a_hat <= 0.05

    def test_scale_equivariance(self):
        r = _simulate_garch(0.1, 0.8, 1.0, 2000, 4)
        base = fit_garch(r)
        for c in (0.5, 2.0):
            scaled = fit_garch(c * r)
            assert scaled.sigma_bar2_hat == pytest.approx(c**2 * base.sigma_bar2_hat, rel=0.05)
            assert scaled.a_hat == pytest.approx(base.a_hat, abs=0.02)
            assert scaled.b_hat == pytest.approx(base.b_hat, abs=0.02)

    def test_determinism(self):
        r = _simulate_garch(0.05, 0.9, 1.0, 600, 5)
        f1 = fit_garch(r)
        f2 = fit_garch(r)
        assert (f1.a_hat, f1.b_hat, f1.sigma_bar2_hat) == (f2.a_hat, f2.b_hat, f2.sigma_bar2_hat)

    def test_degenerate_series_rejected(self):
        with pytest.raises(ValueError, match="degenerate"):
            fit_garch(np.zeros(100))

    def test_short_series_rejected(self):
        with pytest.raises(ValueError, match="50"):
            fit_garch(np.ones(20))

    @pytest.mark.slow
    def test_consistency_long_series(self):
        errs_a, errs_b = [], []
        for rep in range(50):
            r = _simulate_garch(0.05, 0.9, 1.0, 20_000, 100 + rep)
            fit = fit_garch(r)
            errs_a.append(fit.a_hat - 0.05)
            errs_b.append(fit.b_hat - 0.9)
        assert abs(np.mean(errs_a)) < 0.03
        assert abs(np.mean(errs_b)) < 0.03


class TestPooled:
    def _panel(self, a, b, p=20, n=400, seed=6):
        params = BekkParams(a=a, b=b, sigma_bar=np.eye(p))
        return simulate(params, SimConfig(seed=seed, n=n, burn_in=300))

    def test_k1_matches_single_fit(self):
        panel = self._panel(0.1, 0.7)
        pooled = fit_garch_pooled(panel, k=1, seed=9)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(9)))
        coord = rng.choice(panel.p, size=1, replace=False)[0]
        single = fit_garch(panel.returns[coord])
        assert pooled.a_hat == pytest.approx(single.a_hat)
        assert pooled.b_hat == pytest.approx(single.b_hat)

    def test_iid_panel_gives_small_a(self):
        panel = self._panel(0.0, 0.0, seed=8)
        pooled = fit_garch_pooled(panel, k=8, seed=1)
        assert pooled.a_hat < 0.06

    def test_sentinel_and_bounds(self):
        panel = self._panel(0.05, 0.9, seed=10)
        pooled = fit_garch_pooled(panel, k=5, seed=2)
        assert np.isnan(pooled.sigma_bar2_hat)
        assert pooled.a_hat + pooled.b_hat <= 0.99 + 1e-12

    def test_k_bounds(self):
        panel = self._panel(0.1, 0.3)
        with pytest.raises(ValueError):
            fit_garch_pooled(panel, k=0)
        with pytest.raises(ValueError):
            fit_garch_pooled(panel, k=panel.p + 1)

    @pytest.mark.slow
    def test_pooling_reduces_replication_variance(self):
        a_single, a_pooled = [], []
        for rep in range(60):
            params = BekkParams(a=0.05, b=0.9, sigma_bar=np.eye(40))
            panel = simulate(params, SimConfig(seed=500 + rep, n=134, burn_in=800))
            a_single.append(fit_garch_pooled(panel, k=1, seed=rep).a_hat)
            a_pooled.append(fit_garch_pooled(panel, k=10, seed=rep).a_hat)
        assert np.var(a_pooled, ddof=1) < np.var(a_single, ddof=1)
