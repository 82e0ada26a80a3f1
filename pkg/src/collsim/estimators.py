"""Monte Carlo estimators, sample moments and prediction intervals.

The population estimate of expected total collections is the sum over
accounts of the per-account realisation means; its variance under a plan with
per-account counts R_i and per-block counts r_j is

    sigma2_block_j / r_j + sum_i sigma2_i / R_i    (summed over portfolios).

Prediction intervals combine the natural variability of the collections with
the Monte Carlo error of the mean estimate:

    half_width = z_(1+p)/2 * sqrt( sigma2_D (1 + 1/r) + sum_i sigma2_i (1 + 1/R_i) ).

Per-account variances come either from the realisation sample variances
(method M1, requires R_i >= 2 everywhere) or from the Gaussian-process
variance emulator (method M2).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import ndtr

from .population import Population
from .simulator import RealisationPlan, SimulationOutput

__all__ = [
    "Moments",
    "VarianceSource",
    "VarianceInputs",
    "MuEstimate",
    "PredictionInterval",
    "sample_moments",
    "normal_quantile",
    "estimate_mu",
    "estimator_variance",
    "prediction_interval",
    "monthly_bands",
    "variance_inputs_from_samples",
]


class VarianceSource(Enum):
    SAMPLE = "M1"
    EMULATOR = "M2"
    REFERENCE = "true"


@dataclass(frozen=True)
class Moments:
    mean: float
    variance: float
    kurtosis: float  # plain kurtosis m4/m2^2 (normal = 3); NaN for degenerate samples


def sample_moments(values, require: str = "variance") -> Moments:
    """Mean, unbiased variance and plain kurtosis of a sample.

    Kurtosis is m4/m2^2 with central *sample* moments; a zero second moment
    makes it NaN (degenerate sample).  ``require`` names the highest moment
    that must be computable: with the default ``"variance"`` a sample of 2 or
    3 values succeeds with NaN kurtosis, while ``"kurtosis"`` demands at
    least 4 values.
    """
    x = np.asarray(values, dtype=float)
    if x.ndim != 1:
        raise ValueError("sample_moments expects a 1-D sample")
    n = len(x)
    if n < 2:
        raise ValueError(f"variance needs at least 2 values, got {n}")
    if require == "kurtosis" and n < 4:
        raise ValueError(f"kurtosis needs at least 4 values, got {n}")
    mean = float(x.mean())
    variance = float(x.var(ddof=1))
    m2 = x.var()
    if n < 4 or m2 == 0.0:
        kurt = float("nan")
    else:
        m4 = float(np.mean((x - mean) ** 4))
        kurt = m4 / m2**2
    return Moments(mean=mean, variance=variance, kurtosis=kurt)


# --------------------------------------------------------------------------
# Inverse normal CDF: Acklam's rational approximation plus one Newton step.
# Absolute error below 1e-9 over (0, 1).

_ACKLAM_A = (
    -3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
    1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00,
)
_ACKLAM_B = (
    -5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
    6.680131188771972e01, -1.328068155288572e01,
)
_ACKLAM_C = (
    -7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
    -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00,
)
_ACKLAM_D = (
    7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
    3.754408661907416e00,
)


def normal_quantile(q: float) -> float:
    """Quantile of the standard normal distribution."""
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    a, b, c, d = _ACKLAM_A, _ACKLAM_B, _ACKLAM_C, _ACKLAM_D
    p_low, p_high = 0.02425, 1 - 0.02425
    if q < p_low:
        r = np.sqrt(-2 * np.log(q))
        x = (((((c[0] * r + c[1]) * r + c[2]) * r + c[3]) * r + c[4]) * r + c[5]) / (
            (((d[0] * r + d[1]) * r + d[2]) * r + d[3]) * r + 1
        )
    elif q <= p_high:
        r = q - 0.5
        s = r * r
        x = (
            (((((a[0] * s + a[1]) * s + a[2]) * s + a[3]) * s + a[4]) * s + a[5])
            * r
            / (((((b[0] * s + b[1]) * s + b[2]) * s + b[3]) * s + b[4]) * s + 1)
        )
    else:
        r = np.sqrt(-2 * np.log(1 - q))
        x = -(((((c[0] * r + c[1]) * r + c[2]) * r + c[3]) * r + c[4]) * r + c[5]) / (
            (((d[0] * r + d[1]) * r + d[2]) * r + d[3]) * r + 1
        )
    # one Newton refinement against the exact CDF
    err = ndtr(x) - q
    x -= err * np.sqrt(2 * np.pi) * np.exp(0.5 * x * x)
    return float(x)


# --------------------------------------------------------------------------
# Point estimates


@dataclass(frozen=True)
class MuEstimate:
    total: float
    per_portfolio: np.ndarray  # indexed by portfolio
    per_month: np.ndarray | None  # length horizon, None if monthly stats absent


def estimate_mu(output: SimulationOutput, plan: RealisationPlan, population: Population) -> MuEstimate:
    """Unbiased Monte Carlo estimates of expected collections.

    Returns the population total, the per-portfolio totals (which sum exactly
    to the population total) and, when the output carries monthly statistics,
    the per-month expected collections.
    """
    if output.n != population.n or plan.n != population.n:
        raise ValueError("output, plan and population sizes disagree")
    means = np.empty(population.n)
    for i, tot in enumerate(output.totals):
        if tot is None or len(tot) == 0:
            raise ValueError(f"account {i} has no realisations")
        means[i] = tot.mean()
    per_portfolio = np.array(
        [means[population.portfolio == j].sum() for j in range(population.n_portfolios)]
    )
    per_month = None
    if output.monthly_sum is not None:
        per_month = (output.monthly_sum / plan.counts[:, None]).sum(axis=0)
    return MuEstimate(total=float(means.sum()), per_portfolio=per_portfolio, per_month=per_month)


@dataclass(frozen=True)
class VarianceInputs:
    """Per-account and per-block variances feeding the variance formulas.

    ``sigma2_independent`` is indexed by account id (entries for dependent
    accounts are ignored); ``sigma2_block`` is indexed by portfolio, NaN where
    a portfolio has no dependent block.
    """

    sigma2_independent: np.ndarray
    sigma2_block: np.ndarray
    source: VarianceSource

    def __post_init__(self):
        if np.any(np.asarray(self.sigma2_independent) < 0):
            raise ValueError("independent-account variances must be non-negative")
        blk = np.asarray(self.sigma2_block)
        if np.any(blk[~np.isnan(blk)] < 0):
            raise ValueError("block variances must be non-negative")


def variance_inputs_from_samples(
    output: SimulationOutput, population: Population, source: VarianceSource = VarianceSource.SAMPLE
) -> VarianceInputs:
    """M1 variance inputs: realisation sample variances (requires R_i >= 2)."""
    offenders = [i for i, t in enumerate(output.totals) if len(t) < 2]
    if offenders:
        head = ", ".join(str(i) for i in offenders[:10])
        raise ValueError(
            f"sample variances need R_i >= 2; offending accounts: {head}"
            + (" ..." if len(offenders) > 10 else "")
        )
    sigma2 = np.array([t.var(ddof=1) for t in output.totals])
    sigma2_block = np.full(population.n_portfolios, np.nan)
    for j, blk in output.block_totals.items():
        sigma2_block[j] = blk.var(ddof=1)
    return VarianceInputs(sigma2_independent=sigma2, sigma2_block=sigma2_block, source=source)


def estimator_variance(inputs: VarianceInputs, plan: RealisationPlan, population: Population):
    """Variance of the mean estimate, per portfolio and in total."""
    if np.any(plan.counts < 0):
        raise ValueError("plan counts must be non-negative")
    per_portfolio = np.empty(population.n_portfolios)
    for j, pf in enumerate(population.portfolios):
        s2 = inputs.sigma2_independent[pf.independent_ids]
        r = plan.counts[pf.independent_ids]
        # zero-variance accounts contribute nothing even with a zero count
        with np.errstate(divide="ignore", invalid="ignore"):
            v = float(np.where(s2 > 0, s2 / r, 0.0).sum())
        if len(pf.dependent_ids):
            s2d = inputs.sigma2_block[j]
            if np.isnan(s2d):
                raise ValueError(f"portfolio {j} has a dependent block but no block variance input")
            v += s2d / plan.counts[pf.dependent_ids[0]]
        per_portfolio[j] = v
    return per_portfolio, float(per_portfolio.sum())


# --------------------------------------------------------------------------
# Prediction intervals


@dataclass(frozen=True)
class PredictionInterval:
    center: float
    half_width: float
    coverage_p: float

    @property
    def lower(self) -> float:
        return self.center - self.half_width

    @property
    def upper(self) -> float:
        return self.center + self.half_width

    def contains(self, x: float) -> bool:
        return self.lower <= x <= self.upper

    @property
    def relative_uncertainty(self) -> float:
        return 2.0 * self.half_width / self.center


def _prediction_error_variance(sigma2_indep, r_indep, sigma2_block, r_block):
    v = float((sigma2_indep * (1.0 + 1.0 / r_indep)).sum())
    for s2d, r in zip(sigma2_block, r_block):
        if not np.isnan(s2d):
            v += s2d * (1.0 + 1.0 / r)
    return v


def prediction_interval(
    mu_hat: float,
    inputs: VarianceInputs,
    plan: RealisationPlan,
    population: Population,
    p: float = 0.95,
) -> PredictionInterval:
    """Normal-quantile prediction interval for the realised total collections."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"coverage probability must lie in (0, 1), got {p}")
    indep = population.independent_ids
    if inputs.source is VarianceSource.SAMPLE:
        low = indep[plan.counts[indep] < 2]
        if len(low):
            head = ", ".join(str(i) for i in low[:10])
            raise ValueError(
                f"M1 intervals need R_i >= 2 for every account; offenders: {head}"
                + (" ..." if len(low) > 10 else "")
            )
    r_block, s2_block = [], []
    for j, pf in enumerate(population.portfolios):
        if len(pf.dependent_ids):
            s2_block.append(inputs.sigma2_block[j])
            r_block.append(plan.counts[pf.dependent_ids[0]])
    var = _prediction_error_variance(
        inputs.sigma2_independent[indep], plan.counts[indep], s2_block, r_block
    )
    z = normal_quantile((1.0 + p) / 2.0)
    return PredictionInterval(center=float(mu_hat), half_width=z * float(np.sqrt(var)), coverage_p=p)


def monthly_bands(
    output: SimulationOutput,
    plan: RealisationPlan,
    population: Population,
    p: float = 0.95,
) -> list[PredictionInterval]:
    """Per-month prediction intervals from month-specific sample variances.

    Only defined for M1 with an equal-realisations plan, mirroring the fact
    that the variance emulator predicts total-collection variances only.
    """
    if output.monthly_sum is None:
        raise ValueError("monthly bands need a run with store_monthly=True")
    counts = plan.counts
    if np.any(counts < 2):
        low = np.flatnonzero(counts < 2)
        head = ", ".join(str(i) for i in low[:10])
        raise ValueError(f"monthly bands need R_i >= 2 for every account; offenders: {head}")
    if len(np.unique(counts)) != 1:
        raise ValueError("monthly bands require an equal-realisations plan")
    r = counts[0]

    indep = population.independent_ids
    mean_m = output.monthly_sum / counts[:, None]
    var_m = (output.monthly_sumsq - counts[:, None] * mean_m**2) / (counts[:, None] - 1.0)
    var_m = np.maximum(var_m, 0.0)

    horizon = output.horizon
    z = normal_quantile((1.0 + p) / 2.0)
    bands = []
    for t in range(horizon):
        v = float((var_m[indep, t] * (1.0 + 1.0 / counts[indep])).sum())
        center = float(mean_m[indep, t].sum())
        for j, blk in output.block_monthly.items():
            s2d = float(blk[:, t].var(ddof=1))
            v += s2d * (1.0 + 1.0 / len(blk))
            center += float(blk[:, t].mean())
        bands.append(PredictionInterval(center=center, half_width=z * float(np.sqrt(v)), coverage_p=p))
    return bands
