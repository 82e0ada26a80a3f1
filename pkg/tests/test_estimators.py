"""Moments, quantiles, mean/variance estimation and prediction intervals."""

import math

import numpy as np
import pytest
from scipy.special import ndtri

from collsim.estimators import (
    PredictionInterval,
    VarianceInputs,
    VarianceSource,
    estimate_mu,
    estimator_variance,
    monthly_bands,
    normal_quantile,
    prediction_interval,
    sample_moments,
    variance_inputs_from_samples,
)
from collsim.population import init_population
from collsim.simulator import RealisationPlan, run_plan


class TestSampleMoments:
    def test_hand_values(self):
        m = sample_moments([0.0, 2.0])
        assert m.mean == 1.0
        assert m.variance == 2.0  # ddof=1
        assert math.isnan(m.kurtosis)  # needs at least 4 points

    def test_kurtosis_of_symmetric_sample(self):
        # {-1, -1, 1, 1}: m2 = 1, m4 = 1 -> kurtosis 1 (plain m4/m2^2, normal = 3)
        m = sample_moments([-1.0, -1.0, 1.0, 1.0], require="kurtosis")
        assert m.kurtosis == pytest.approx(1.0, abs=1e-14)

    def test_normal_kurtosis(self):
        g = np.random.Generator(np.random.Philox(key=9))
        m = sample_moments(g.standard_normal(400000), require="kurtosis")
        assert m.kurtosis == pytest.approx(3.0, abs=0.05)

    def test_degenerate_kurtosis_is_nan(self):
        assert math.isnan(sample_moments([5.0, 5.0, 5.0, 5.0]).kurtosis)

    def test_insufficient_sizes_error(self):
        with pytest.raises(ValueError):
            sample_moments([1.0])
        with pytest.raises(ValueError):
            sample_moments([1.0, 2.0, 3.0], require="kurtosis")


class TestNormalQuantile:
    def test_against_reference_inverse(self):
        for q in (0.001, 0.025, 0.1, 0.5, 0.9, 0.975, 0.995, 0.9999):
            assert normal_quantile(q) == pytest.approx(float(ndtri(q)), abs=1e-12)

    def test_symmetry(self):
        assert normal_quantile(0.975) == pytest.approx(-normal_quantile(0.025), abs=1e-13)

    def test_invalid(self):
        for q in (0.0, 1.0, -0.5):
            with pytest.raises(ValueError):
                normal_quantile(q)


@pytest.fixture(scope="module")
def small_run():
    pop = init_population(150, (0.7, 0.3), seed=13)
    plan = RealisationPlan.equal(150, 6)
    out = run_plan(pop, plan, seed=5, store_monthly=True)
    return pop, plan, out


class TestEstimateMu:
    def test_portfolio_totals_sum_exactly(self, small_run):
        pop, plan, out = small_run
        mu = estimate_mu(out, plan, pop)
        assert mu.per_portfolio.sum() == pytest.approx(mu.total, abs=1e-9)
        assert mu.per_month.sum() == pytest.approx(mu.total, abs=1e-6)

    def test_equals_mean_of_account_means(self, small_run):
        pop, plan, out = small_run
        mu = estimate_mu(out, plan, pop)
        manual = sum(float(np.mean(t)) for t in out.totals)
        assert mu.total == pytest.approx(manual, abs=1e-9)


class TestEstimatorVariance:
    def test_hand_computed(self):
        pop = init_population(150, (0.7, 0.3), seed=13)
        counts = np.arange(2.0, 152.0)
        for pf in pop.portfolios:
            counts[pf.dependent_ids] = 4.0
        plan = RealisationPlan(counts=counts)
        s2 = np.linspace(1.0, 10.0, 150)
        s2_block = np.full(2, np.nan)
        expected = np.zeros(2)
        for j, pf in enumerate(pop.portfolios):
            expected[j] = (s2[pf.independent_ids] / counts[pf.independent_ids]).sum()
            if len(pf.dependent_ids):
                s2_block[j] = 3.0 + j
                expected[j] += s2_block[j] / 4.0
        inputs = VarianceInputs(sigma2_independent=s2, sigma2_block=s2_block, source=VarianceSource.SAMPLE)
        per_pf, total = estimator_variance(inputs, plan, pop)
        assert per_pf == pytest.approx(expected, rel=1e-12)
        assert total == pytest.approx(expected.sum(), rel=1e-12)

    def test_missing_block_variance_raises(self):
        pop = init_population(300, (1.0,), seed=8)
        assert len(pop.portfolios[0].dependent_ids) >= 1
        inputs = VarianceInputs(
            sigma2_independent=np.ones(300), sigma2_block=np.array([np.nan]), source=VarianceSource.SAMPLE
        )
        with pytest.raises(ValueError, match="block"):
            estimator_variance(inputs, RealisationPlan.equal(300, 2), pop)

    def test_zero_variance_accounts_allowed_zero_counts(self):
        pop = init_population(20, (1.0,), seed=3)
        s2 = np.ones(20)
        s2[3] = 0.0
        counts = np.full(20, 2.0)
        counts[3] = 0.0
        inputs = VarianceInputs(
            sigma2_independent=s2, sigma2_block=np.array([np.nan]), source=VarianceSource.REFERENCE
        )
        assert not len(pop.portfolios[0].dependent_ids)
        _, total = estimator_variance(inputs, RealisationPlan(counts=counts), pop)
        assert total == pytest.approx(19 / 2.0)


class TestVarianceInputsFromSamples:
    def test_matches_manual_sample_variances(self, small_run):
        pop, plan, out = small_run
        inputs = variance_inputs_from_samples(out, pop)
        assert inputs.source is VarianceSource.SAMPLE
        for i in (0, 7, 42):
            assert inputs.sigma2_independent[i] == pytest.approx(np.var(out.totals[i], ddof=1))
        for j, blk in out.block_totals.items():
            assert inputs.sigma2_block[j] == pytest.approx(np.var(blk, ddof=1))

    def test_single_realisation_rejected_with_offenders(self):
        pop = init_population(10, (1.0,), seed=1)
        out = run_plan(pop, RealisationPlan.equal(10, 1), seed=0)
        with pytest.raises(ValueError, match=r"R_i >= 2"):
            variance_inputs_from_samples(out, pop)


class TestPredictionInterval:
    def test_interval_algebra(self):
        iv = PredictionInterval(center=100.0, half_width=10.0, coverage_p=0.95)
        assert iv.lower == 90.0 and iv.upper == 110.0
        assert iv.contains(90.0) and iv.contains(110.0) and not iv.contains(89.999)
        assert iv.relative_uncertainty == pytest.approx(0.2)

    def test_half_width_formula(self, small_run):
        # half width = z * sqrt(sum sigma2_i (1 + 1/R_i) + sum sigma2_D (1 + 1/r_D))
        pop, plan, out = small_run
        inputs = variance_inputs_from_samples(out, pop)
        iv = prediction_interval(1000.0, inputs, plan, pop, p=0.9)
        v = float((inputs.sigma2_independent[pop.independent_ids] * (1 + 1 / 6)).sum())
        for j, pf in enumerate(pop.portfolios):
            if len(pf.dependent_ids):
                v += inputs.sigma2_block[j] * (1 + 1 / 6)
        assert iv.half_width == pytest.approx(normal_quantile(0.95) * math.sqrt(v), rel=1e-12)
        assert iv.center == 1000.0

    def test_sample_source_requires_two_realisations(self):
        pop = init_population(10, (1.0,), seed=3)
        inputs = VarianceInputs(
            sigma2_independent=np.ones(10), sigma2_block=np.array([np.nan]), source=VarianceSource.SAMPLE
        )
        assert not len(pop.portfolios[0].dependent_ids)
        with pytest.raises(ValueError, match="offenders"):
            prediction_interval(0.0, inputs, RealisationPlan.equal(10, 1), pop)
        # an emulator source is fine with single realisations
        em = VarianceInputs(
            sigma2_independent=np.ones(10), sigma2_block=np.array([np.nan]), source=VarianceSource.EMULATOR
        )
        iv = prediction_interval(0.0, em, RealisationPlan.equal(10, 1), pop)
        assert iv.half_width > 0

    def test_invalid_coverage(self, small_run):
        pop, plan, out = small_run
        inputs = variance_inputs_from_samples(out, pop)
        with pytest.raises(ValueError):
            prediction_interval(0.0, inputs, plan, pop, p=1.0)


class TestMonthlyBands:
    def test_bands_are_coherent(self, small_run):
        pop, plan, out = small_run
        bands = monthly_bands(out, plan, pop, p=0.95)
        assert len(bands) == out.horizon
        mu = estimate_mu(out, plan, pop)
        centers = np.array([b.center for b in bands])
        assert centers == pytest.approx(mu.per_month, abs=1e-6)
        assert all(b.half_width >= 0 for b in bands)

    def test_requires_monthly_stats(self, small_run):
        pop, plan, _ = small_run
        out = run_plan(pop, plan, seed=5, store_monthly=False)
        with pytest.raises(ValueError, match="store_monthly"):
            monthly_bands(out, plan, pop)

    def test_requires_equal_plan(self, small_run):
        pop, plan, out = small_run
        counts = plan.counts.copy()
        indep = pop.independent_ids
        counts[indep[0]] = 9.0
        with pytest.raises(ValueError, match="equal"):
            monthly_bands(out, RealisationPlan(counts=counts), pop)
