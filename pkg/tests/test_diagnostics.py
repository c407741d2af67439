"""Diagnostics: autocorrelation, ESS, R-hat, ESJD, batch means, reports."""

import math

import numpy as np
import pytest
from scipy import signal

from mcmclab.core import ChainRecord
from mcmclab.diagnostics import (
    DegenerateChainError,
    autocorrelation,
    batch_means_variance,
    build_report,
    esjd,
    ess,
    gelman_rubin,
)
from mcmclab.targets import make_standard_gaussian


def ar1_series(rho, n, key=1, loc=0.0):
    """Exact AR(1) chain with unit marginal variance via lfilter."""
    gen = np.random.Generator(np.random.Philox(key=key))
    noise = gen.standard_normal(n) * math.sqrt(1.0 - rho * rho)
    noise[0] = gen.standard_normal()
    return loc + signal.lfilter([1.0], [1.0, -rho], noise)


def make_record(samples):
    samples = np.atleast_2d(samples)
    if samples.shape[0] == 1:
        samples = samples.T
    n = samples.shape[0]
    return ChainRecord(
        samples=samples,
        accept_flags=np.ones(n, dtype=bool),
        logpi=np.zeros(n),
    )


class TestAutocorrelation:
    def test_lag_zero_is_one(self):
        x = ar1_series(0.4, 500)
        rho = autocorrelation(x, 20)
        assert rho[0] == 1.0

    def test_alternating_series(self):
        n = 1000
        x = np.tile([1.0, -1.0], n // 2)
        rho = autocorrelation(x, 1)
        assert rho[1] == pytest.approx(-(n - 1) / n, abs=1e-12)

    def test_ar1_matches_analytic(self):
        x = ar1_series(0.5, 100_000)
        rho = autocorrelation(x, 5)
        for k in range(1, 6):
            assert rho[k] == pytest.approx(0.5 ** k, abs=0.02)

    def test_zero_variance_error(self):
        with pytest.raises(DegenerateChainError):
            autocorrelation(np.ones(100), 10)


class TestEss:
    def test_iid_draws(self):
        gen = np.random.Generator(np.random.Philox(key=7))
        x = gen.standard_normal(100_000)
        ratio = ess(x) / 100_000
        assert 0.95 <= ratio <= 1.05

    def test_ess_clamped_at_n(self):
        gen = np.random.Generator(np.random.Philox(key=8))
        x = gen.standard_normal(5000)
        assert ess(x) <= 5000.0

    def test_ar1_closed_form(self):
        x = ar1_series(0.5, 100_000, key=9)
        ratio = ess(x) / 100_000
        assert ratio == pytest.approx(1.0 / 3.0, rel=0.10)

    def test_duplicated_pair_chain(self):
        gen = np.random.Generator(np.random.Philox(key=10))
        base = gen.standard_normal(50_000)
        x = np.repeat(base, 2)
        ratio = ess(x) / 100_000
        assert ratio == pytest.approx(0.5, abs=0.05)

    def test_degenerate_error(self):
        with pytest.raises(DegenerateChainError):
            ess(np.zeros(100))


class TestGelmanRubin:
    def test_all_half_chains_identical_hit_floor(self):
        # B = 0 needs every half-chain mean equal: tile one half twice.
        half = ar1_series(0.2, 500, key=11)
        x = np.tile(half, 2).reshape(-1, 1)
        rhat = gelman_rubin([x, x.copy()])
        floor = math.sqrt((500 - 1) / 500)
        assert rhat[0] == pytest.approx(floor, abs=1e-12)

    def test_same_distribution_converges(self):
        chains = [
            np.random.Generator(np.random.Philox(key=k)).standard_normal((10_000, 3))
            for k in range(4)
        ]
        rhat = gelman_rubin(chains)
        assert np.all(rhat < 1.01)

    def test_separated_means_flagged(self):
        a = ar1_series(0.0, 5000, key=20).reshape(-1, 1)
        b = ar1_series(0.0, 5000, key=21, loc=3.0).reshape(-1, 1)
        rhat = gelman_rubin([a, b])
        assert rhat[0] > 1.2

    def test_monotone_in_separation(self):
        values = []
        for sep in (0.0, 1.0, 2.0, 3.0):
            a = ar1_series(0.0, 4000, key=30).reshape(-1, 1)
            b = ar1_series(0.0, 4000, key=31, loc=sep).reshape(-1, 1)
            values.append(gelman_rubin([a, b])[0])
        assert all(x <= y + 1e-12 for x, y in zip(values, values[1:]))

    def test_degenerate_and_arity_errors(self):
        with pytest.raises(ValueError):
            gelman_rubin([np.zeros((100, 1))])
        with pytest.raises(DegenerateChainError):
            gelman_rubin([np.zeros((100, 1)), np.zeros((100, 1))])


class TestEsjd:
    def test_constant_chain(self):
        assert esjd(np.ones((50, 2))) == 0.0

    def test_hand_value(self):
        assert esjd(np.array([[0.0], [1.0], [3.0]])) == pytest.approx(2.5)

    def test_quadratic_scaling(self):
        x = ar1_series(0.3, 2000, key=12).reshape(-1, 1)
        assert esjd(3.0 * x) == pytest.approx(9.0 * esjd(x), rel=1e-12)


class TestBatchMeans:
    def test_iid_unit_variance(self):
        gen = np.random.Generator(np.random.Philox(key=17))
        x = gen.standard_normal(100_000)
        assert batch_means_variance(x, 100) == pytest.approx(1.0, rel=0.15)

    def test_ar1_closed_form(self):
        x = ar1_series(0.5, 100_000, key=14)
        assert batch_means_variance(x, 100) == pytest.approx(3.0, rel=0.15)

    def test_constant_series(self):
        assert batch_means_variance(np.ones(1000), 10) == 0.0

    def test_input_errors(self):
        with pytest.raises(ValueError):
            batch_means_variance(np.arange(100.0), 5)
        with pytest.raises(ValueError):
            batch_means_variance(np.arange(15.0), 10)

    def test_agrees_with_ess_based_estimate(self):
        # two estimators of the same asymptotic variance within 1.5x
        for rho, key in ((0.3, 15), (0.5, 16)):
            x = ar1_series(rho, 100_000, key=key)
            bm = batch_means_variance(x, 100)
            ess_based = x.var(ddof=1) * 100_000 / ess(x)
            assert 1 / 1.5 <= bm / ess_based <= 1.5


class TestBuildReport:
    def test_single_chain_no_rhat(self):
        rec = make_record(ar1_series(0.3, 2000, key=17))
        report = build_report([rec])
        assert report.rhat is None
        assert report.ess.shape == (1,)
        assert report.acceptance_rate == 1.0

    def test_two_identical_chains(self):
        half = ar1_series(0.3, 1000, key=18)
        x = np.tile(half, 2)
        r1, r2 = make_record(x), make_record(x.copy())
        single = build_report([r1])
        both = build_report([r1, r2])
        floor = math.sqrt((1000 - 1) / 1000)
        assert both.rhat[0] == pytest.approx(floor, abs=1e-12)
        assert both.ess[0] == pytest.approx(2.0 * single.ess[0], rel=1e-9)

    def test_moment_errors_against_target(self):
        target = make_standard_gaussian(2)
        gen = np.random.Generator(np.random.Philox(key=19))
        rec = make_record(gen.standard_normal((20_000, 2)))
        report = build_report([rec], target)
        assert np.all(report.mean_abs_error < 0.05)
        assert np.all(report.var_abs_error < 0.05)

    def test_mismatched_dims_error(self):
        a = make_record(ar1_series(0.3, 500, key=22))
        b = make_record(
            np.random.Generator(np.random.Philox(key=23)).standard_normal((500, 2))
        )
        with pytest.raises(ValueError):
            build_report([a, b])

    def test_permutation_covariance(self):
        gen = np.random.Generator(np.random.Philox(key=24))
        x = np.cumsum(gen.standard_normal((4000, 3)), axis=0) * 0.01
        x += gen.standard_normal((4000, 3))
        perm = [2, 0, 1]
        r_orig = build_report([make_record(x)])
        r_perm = build_report([make_record(x[:, perm])])
        assert np.allclose(r_perm.ess, r_orig.ess[perm])
        assert np.allclose(r_perm.asym_variance, r_orig.asym_variance[perm])
        assert np.allclose(r_perm.sample_mean, r_orig.sample_mean[perm])
