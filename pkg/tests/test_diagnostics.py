import math

import numpy as np
import pytest
import scipy.integrate
import scipy.special
from hypothesis import given, settings, strategies as st

from metocal.data_model import CovariateId, KIND_DET
from metocal.diagnostics import (
    _kolmogorov_sf,
    bootstrap_ci,
    bootstrap_model_ci,
    bootstrap_model_samples,
    crps_gaussian,
    crps_values,
    error_stats,
    ks_test,
    mean_crps,
    pit_histogram,
    standardized_residuals,
)
from metocal.errors import DataError, FitError
from metocal.regression import GaussianForecast, ModelSpec

from conftest import HS, make_dataset

DET_HS = CovariateId(HS, KIND_DET)


def crps_quadrature(y, mu, sigma):
    """Independent oracle: adaptive quadrature of the defining integral
    over the squared difference between forecast CDF and the step at y."""

    def integrand(x):
        return (scipy.special.ndtr((x - mu) / sigma) - (x >= y)) ** 2

    lo, hi = mu - 12 * sigma, mu + 12 * sigma
    # split at y: the integrand has a kink there
    a, _ = scipy.integrate.quad(integrand, lo, y, limit=200)
    b, _ = scipy.integrate.quad(integrand, y, hi, limit=200)
    return a + b


class TestErrorStats:
    def test_perfect_forecast(self):
        y = np.array([1.0, 2.0, 3.0])
        assert error_stats(y, y) == (0.0, 0.0)

    def test_symmetric_errors(self):
        bias, sd = error_stats(np.array([0.0, 2.0]), np.array([1.0, 1.0]))
        assert bias == 0.0
        assert sd == pytest.approx(math.sqrt(2.0), rel=1e-15)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(71)
        y, mu = rng.normal(2, 1, 97), rng.normal(2, 1, 97)
        bias, sd = error_stats(y, mu)
        err = [yi - mi for yi, mi in zip(y, mu)]
        naive_bias = sum(err) / len(err)
        naive_sd = math.sqrt(sum((e - naive_bias) ** 2 for e in err) / (len(err) - 1))
        assert bias == pytest.approx(naive_bias, rel=1e-12)
        assert sd == pytest.approx(naive_sd, rel=1e-12)

    def test_needs_two_rows(self):
        with pytest.raises(DataError):
            error_stats(np.array([1.0]), np.array([1.0]))


class TestStandardizedResiduals:
    def test_zero_and_scaling(self):
        fcs = [GaussianForecast(1.0, 0.5), GaussianForecast(2.0, 0.5)]
        r = standardized_residuals(np.array([1.0, 3.0]), fcs)
        assert list(r) == [0.0, 2.0]

    def test_vector_matches_loop(self):
        rng = np.random.default_rng(72)
        y = rng.normal(0, 1, 40)
        fcs = [GaussianForecast(rng.normal(), abs(rng.normal()) + 0.1) for _ in range(40)]
        r = standardized_residuals(y, fcs)
        for i, f in enumerate(fcs):
            assert r[i] == (y[i] - f.mu) / f.sigma

    def test_sigma_zero_rejected(self):
        with pytest.raises(FitError):
            standardized_residuals(np.array([1.0]), [GaussianForecast(1.0, 0.0)])


class TestKsTest:
    def test_exact_uniform_grid(self):
        n = 50
        sample = scipy.special.ndtri((np.arange(1, n + 1) - 0.5) / n)
        d, _ = ks_test(sample)
        assert d == pytest.approx(0.5 / n, rel=1e-9)

    def test_rejection_rate_calibrated(self):
        rng = np.random.default_rng(73)
        rejections = 0
        for _ in range(1000):
            _, p = ks_test(rng.standard_normal(1000))
            rejections += p < 0.05
        assert 0.03 <= rejections / 1000 <= 0.07

    def test_power_against_shift(self):
        rng = np.random.default_rng(74)
        _, p = ks_test(rng.standard_normal(200) + 1.0)
        assert p < 1e-6

    def test_series_matches_scipy_kolmogorov(self):
        for lam in (0.3, 0.5, 0.8, 1.0, 1.5, 2.0):
            assert _kolmogorov_sf(lam) == pytest.approx(
                float(scipy.special.kolmogorov(lam)), abs=1e-10
            )

    def test_shuffle_invariance(self):
        rng = np.random.default_rng(75)
        x = rng.standard_normal(64)
        d1, p1 = ks_test(x)
        d2, p2 = ks_test(rng.permutation(x))
        assert (d1, p1) == (d2, p2)

    def test_min_sample_size(self):
        with pytest.raises(DataError):
            ks_test(np.array([0.1, 0.2, 0.3, 0.4]))


class TestCrps:
    def test_at_center_unit_sigma(self):
        # 2*phi(0) - 1/sqrt(pi); frozen from the quadrature oracle below
        want = crps_quadrature(0.0, 0.0, 1.0)
        assert want == pytest.approx(0.23369497725510904, abs=1e-8)
        assert crps_gaussian(0.0, 0.0, 1.0) == pytest.approx(want, abs=1e-8)

    def test_point_mass(self):
        assert crps_gaussian(3.0, 0.0, 0.0) == 3.0

    def test_closed_form_vs_quadrature_grid(self):
        for z in np.arange(-5.0, 5.5, 0.5):
            for sigma in (0.01, 0.1, 1.0, 10.0):
                y, mu = z * sigma, 0.0
                got = crps_gaussian(y, mu, sigma)
                want = crps_quadrature(y, mu, sigma)
                assert abs(got - want) < 1e-6, (z, sigma)

    @given(
        st.floats(-100, 100),
        st.floats(-100, 100),
        st.one_of(st.just(0.0), st.floats(min_value=1e-6, max_value=50)),
        st.floats(min_value=1e-3, max_value=1e3),
    )
    @settings(max_examples=200)
    def test_positive_homogeneity(self, y, mu, sigma, c):
        base = crps_gaussian(y, mu, sigma)
        scaled = crps_gaussian(c * y, c * mu, c * sigma)
        assert scaled == pytest.approx(c * base, rel=1e-12, abs=1e-12)

    @given(
        st.floats(-100, 100),
        st.floats(-100, 100),
        st.one_of(st.just(0.0), st.floats(min_value=1e-6, max_value=50)),
    )
    @settings(max_examples=200)
    def test_non_negative(self, y, mu, sigma):
        val = crps_gaussian(y, mu, sigma)
        assert val >= 0.0
        if sigma > 0 or y != mu:
            assert val > 0.0

    def test_negative_sigma_rejected(self):
        with pytest.raises(FitError):
            crps_gaussian(0.0, 0.0, -0.1)


class TestMeanCrps:
    def test_identical_rows(self):
        fcs = [GaussianForecast(1.0, 0.5)] * 7
        y = np.full(7, 1.3)
        assert mean_crps(y, fcs) == pytest.approx(crps_gaussian(1.3, 1.0, 0.5), rel=1e-15)

    def test_perfect_point_forecasts(self):
        fcs = [GaussianForecast(2.0, 0.0), GaussianForecast(3.0, 0.0)]
        assert mean_crps(np.array([2.0, 3.0]), fcs) == 0.0

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(76)
        y = rng.normal(0, 1, 31)
        fcs = [GaussianForecast(rng.normal(), abs(rng.normal()) + 0.1) for _ in range(31)]
        rows = crps_values(y, fcs)
        for i, f in enumerate(fcs):
            assert rows[i] == pytest.approx(crps_gaussian(y[i], f.mu, f.sigma), rel=1e-15)
        assert mean_crps(y, fcs) == pytest.approx(float(np.mean(rows)), rel=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            mean_crps(np.array([]), [])


class TestPitHistogram:
    def test_zero_residuals_center_bin(self):
        fcs = [GaussianForecast(1.0, 0.5)] * 9
        hist = pit_histogram(np.full(9, 1.0), fcs, bin_count=10)
        assert hist.counts[5] == 9  # PIT = 0.5 lands in bin [0.5, 0.6)
        assert sum(hist.counts) == 9

    def test_pit_one_goes_to_last_bin(self):
        from metocal.diagnostics import pit_histogram_from_values

        hist = pit_histogram_from_values(np.array([1.0]), bin_count=10)
        assert hist.counts[-1] == 1

    def test_counts_sum_and_order_invariance(self):
        rng = np.random.default_rng(77)
        y = rng.normal(0, 1, 200)
        fcs = [GaussianForecast(0.0, 1.0)] * 200
        h1 = pit_histogram(y, fcs)
        perm = rng.permutation(200)
        h2 = pit_histogram(y[perm], fcs)
        assert h1.counts == h2.counts
        assert h1.n == 200
        assert sum(h1.counts) == 200

    def test_uniform_when_y_from_forecast(self):
        rng = np.random.default_rng(78)
        ok = 0
        crit = 21.665994333461924  # chi2(9).ppf(0.99)
        for _ in range(100):
            mu = rng.normal(0, 1, 10_000)
            sigma = np.abs(rng.normal(1, 0.2, 10_000)) + 0.1
            y = mu + sigma * rng.standard_normal(10_000)
            fcs = [GaussianForecast(m, s) for m, s in zip(mu, sigma)]
            hist = pit_histogram(y, fcs, 10)
            expected = hist.n / 10
            chi2 = sum((c - expected) ** 2 / expected for c in hist.counts)
            ok += chi2 < crit
        assert ok >= 95


class TestBootstrap:
    def test_constant_statistic(self):
        rows = np.arange(10.0)
        lo, hi = bootstrap_ci(rows, lambda r: 4.2, b=100, seed=1)
        assert (lo, hi) == (4.2, 4.2)

    def test_same_seed_identical(self):
        rng = np.random.default_rng(79)
        rows = rng.normal(0, 1, 60)
        stat = lambda r: float(np.mean(r))
        assert bootstrap_ci(rows, stat, 150, seed=5) == bootstrap_ci(rows, stat, 150, seed=5)

    def test_coverage_of_mean(self):
        rng = np.random.default_rng(80)
        theta = 0.7
        covered = 0
        outer = 300
        for i in range(outer):
            rows = theta + rng.standard_normal(500)
            lo, hi = bootstrap_ci(rows, lambda r: float(np.mean(r)), b=200, seed=i)
            covered += lo <= theta <= hi
        assert 0.90 <= covered / outer <= 0.98

    def test_b_minimum_enforced(self):
        with pytest.raises(DataError, match="B >= 100"):
            bootstrap_ci(np.arange(10.0), lambda r: 0.0, b=50, seed=0)

    def test_failure_budget(self):
        def fragile(rows):
            raise FitError("nope")

        with pytest.raises(FitError, match="resamples"):
            bootstrap_ci(np.arange(10.0), fragile, b=100, seed=0)


class TestBootstrapModelCi:
    def test_noiseless_data_degenerate_at_truth(self):
        x = np.linspace(0.0, 3.0, 40)
        data = make_dataset(1.0 + 2.0 * x, {DET_HS: x})
        spec = ModelSpec("lr", HS, (DET_HS,))
        ci = bootstrap_model_ci(data, spec, b=100, seed=3)
        lo, hi = ci["a"]
        assert lo == pytest.approx(1.0, abs=1e-8) and hi == pytest.approx(1.0, abs=1e-8)
        lo, hi = ci["b[det_hs]"]
        assert lo == pytest.approx(2.0, abs=1e-8) and hi == pytest.approx(2.0, abs=1e-8)

    def test_nhgr_truth_inside_band(self):
        rng = np.random.default_rng(81)
        hits = 0
        total = 0
        for rep in range(20):
            n = 800
            x = rng.normal(2, 1, n)
            s_e = np.abs(rng.normal(0.5, 0.15, n)) + 0.05
            y = 0.1 + 0.9 * x + (0.1 + 0.8 * s_e) * rng.standard_normal(n)
            data = make_dataset(y, {DET_HS: x}, ens_sd=s_e)
            ci = bootstrap_model_ci(data, ModelSpec("nhgr", HS, (DET_HS,)), b=100, seed=rep)
            for name, want in (("a", 0.1), ("b[det_hs]", 0.9), ("d", 0.1), ("e", 0.8)):
                lo, hi = ci[name]
                hits += lo <= want <= hi
                total += 4 if False else 1
        assert hits / total >= 0.85

    def test_b_minimum(self):
        data = make_dataset(np.arange(10.0), {DET_HS: np.arange(10.0) + 0.1})
        with pytest.raises(DataError, match="B >= 100"):
            bootstrap_model_samples(data, ModelSpec("lr", HS, (DET_HS,)), b=99, seed=0)
