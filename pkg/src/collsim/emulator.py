"""Gaussian-process emulation of account-level collection variance.

A computer experiment places design points on the unit square of transformed
covariates (balance and credit score through their CDFs), sliced by the six
combinations of segment and prior-payment indicator.  Each design point is
simulated many times to obtain a sample variance of the total collections; the
log of that variance is the GP response, observed with heteroscedastic noise
(kappa - 1)/K fixed from the sample kurtosis.

The default emulator fits one GP per segment with a Matern-5/2 kernel over
three features: transformed balance, transformed credit score and the standard
deviation sqrt(p1 (1 - p1)) of the first-month payment indicator.  An
alternative mode fits one GP per (segment, prior-payment) slice on the two
transformed covariates only; it is kept for comparison but is not the default.

Predictions are exp(posterior mean of the log variance) - the posterior median
under log-normality - so they are strictly positive by construction.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky
from scipy.optimize import minimize

from .population import Account, balance_cdf, balance_cdf_inv, credit_cdf, credit_cdf_inv
from .rng import stream
from .simulator import HORIZON, _simulate_paths, payment_probability

logger = logging.getLogger(__name__)

__all__ = [
    "SLICES",
    "TrainingObservation",
    "SegmentGP",
    "GpEmulator",
    "sliced_lhd",
    "random_design",
    "generate_training_data",
    "matern52",
    "fit_gp",
    "predict_variance",
    "validate_emulator",
]

SLICES = tuple((s, y) for s in (1, 2, 3) for y in (0, 1))

_JITTER = 1e-8
_FORMAT_VERSION = 1


# --------------------------------------------------------------------------
# Experimental design


def _min_dist2(pts: np.ndarray) -> float:
    d = pts[:, None, :] - pts[None, :, :]
    dist2 = (d**2).sum(axis=-1)
    np.fill_diagonal(dist2, np.inf)
    return float(dist2.min())


def sliced_lhd(points_per_slice: int, seed: int = 0, exchange_iters: int = 2000) -> dict:
    """Latin hypercube design per (segment, prior-payment) slice.

    Each slice gets a 2-D Latin hypercube on the transformed-covariate square,
    improved by maximin point exchange: random within-column swaps are kept
    only when they do not decrease the minimum inter-point distance.
    """
    if points_per_slice < 2:
        raise ValueError("need at least 2 points per slice")
    n = points_per_slice
    design = {}
    for s, y in SLICES:
        g = stream(seed, "design", s, y)
        pts = np.empty((n, 2))
        for d in range(2):
            pts[:, d] = (g.permutation(n) + g.random(n)) / n
        best = _min_dist2(pts)
        for _ in range(exchange_iters):
            d = int(g.integers(2))
            i, k = g.integers(n, size=2)
            if i == k:
                continue
            pts[[i, k], d] = pts[[k, i], d]
            cand = _min_dist2(pts)
            if cand > best:
                best = cand
            else:
                pts[[i, k], d] = pts[[k, i], d]
        design[(s, y)] = pts
    return design


def random_design(points_per_slice: int, seed: int = 0) -> dict:
    """Uniform random points per slice, for test sets."""
    return {
        (s, y): stream(seed, "test-design", s, y).random((points_per_slice, 2))
        for s, y in SLICES
    }


# --------------------------------------------------------------------------
# Training data


@dataclass(frozen=True)
class TrainingObservation:
    b_tilde: float
    c_tilde: float
    segment: int
    y0: int
    log_variance: float
    noise_variance: float  # (kappa - 1) / K, clamped to be non-negative
    kurtosis: float
    realisations_used: int


def _simulate_point(b_tilde, c_tilde, s, y, n_real, g):
    """Realised totals for one design point, simulated as an independent account."""
    balance = balance_cdf_inv(b_tilde)
    credit = credit_cdf_inv(c_tilde)
    p0 = payment_probability(credit, s, False)
    p1 = payment_probability(credit, s, True)
    u = g.random((n_real, HORIZON))
    totals, _ = _simulate_paths(
        np.full(n_real, p0), np.full(n_real, p1), np.full(n_real, balance), np.full(n_real, bool(y)), u
    )
    return totals


def _degenerate_variance(totals: np.ndarray, v: float) -> bool:
    """True when the sample variance is zero up to floating-point noise.

    Paths that always collect the full balance produce identical totals; the
    computed variance is then rounding jitter around zero, not a response.
    """
    scale = max(float(np.mean(totals)) ** 2, 1.0)
    return v <= 1e-12 * scale


def generate_training_data(design: dict, n_realisations: int = 1000, seed: int = 0) -> list:
    """Simulate every design point and build the GP training observations.

    Points whose realised sample variance is zero are excluded (their error is
    large but unquantifiable); the number dropped is logged.  A slice that
    loses all of its points raises, as no model can be fitted there.
    """
    if n_realisations < 4:
        raise ValueError("kurtosis needs at least 4 realisations per design point")
    observations = []
    dropped = 0
    for (s, y), pts in design.items():
        kept = 0
        for l, (b_t, c_t) in enumerate(pts):
            g = stream(seed, "train", s, y, l)
            totals = _simulate_point(b_t, c_t, s, y, n_realisations, g)
            v = float(totals.var(ddof=1))
            if _degenerate_variance(totals, v):
                dropped += 1
                continue
            m2 = float(totals.var())
            m4 = float(np.mean((totals - totals.mean()) ** 4))
            kurt = m4 / m2**2
            observations.append(
                TrainingObservation(
                    b_tilde=float(b_t),
                    c_tilde=float(c_t),
                    segment=int(s),
                    y0=int(y),
                    log_variance=float(np.log(v)),
                    noise_variance=max((kurt - 1.0) / n_realisations, 0.0),
                    kurtosis=kurt,
                    realisations_used=int(n_realisations),
                )
            )
            kept += 1
        if kept == 0:
            raise ValueError(f"all design points in slice (segment={s}, y0={y}) were zero-variance")
    if dropped:
        logger.info("excluded %d zero-variance design points from the training set", dropped)
    return observations


def training_data_to_csv(observations, path) -> None:
    import csv

    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["b_tilde", "c_tilde", "segment", "y0", "log_var", "kurtosis", "noise_var"])
        for o in observations:
            w.writerow(
                [repr(o.b_tilde), repr(o.c_tilde), o.segment, o.y0, repr(o.log_variance), repr(o.kurtosis), repr(o.noise_variance)]
            )


# --------------------------------------------------------------------------
# Gaussian process core


def matern52(x, x_prime, lengthscales, signal_variance):
    """Matern-5/2 kernel with per-dimension lengthscales.

    Accepts single vectors or stacked rows; returns the full cross-kernel
    matrix for 2-D inputs.
    """
    a = np.atleast_2d(np.asarray(x, dtype=float))
    b = np.atleast_2d(np.asarray(x_prime, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise ValueError("input dimensions disagree")
    ell = np.asarray(lengthscales, dtype=float)
    diff = (a[:, None, :] - b[None, :, :]) / ell
    r = np.sqrt((diff**2).sum(axis=-1))
    k = signal_variance * (1.0 + np.sqrt(5.0) * r + 5.0 * r**2 / 3.0) * np.exp(-np.sqrt(5.0) * r)
    if np.ndim(x) == 1 and np.ndim(x_prime) == 1:
        return float(k[0, 0])
    return k


def _features(b_tilde, c_tilde, segment, y0, credit=None):
    """Default 3-feature representation used by the per-segment GPs."""
    if credit is None:
        credit = credit_cdf_inv(c_tilde)
    p1 = payment_probability(credit, segment, np.asarray(y0, dtype=bool))
    sd1 = np.sqrt(p1 * (1.0 - p1))
    return np.column_stack([np.atleast_1d(b_tilde), np.atleast_1d(c_tilde), np.atleast_1d(sd1)])


@dataclass
class SegmentGP:
    """One fitted GP: Matern-5/2 kernel, constant mean, fixed per-point noise."""

    x_train: np.ndarray
    y_train: np.ndarray
    noise: np.ndarray
    lengthscales: np.ndarray
    signal_variance: float
    beta: float
    log_marginal_likelihood: float
    _chol: tuple = field(default=None, repr=False)

    def _factor(self):
        if self._chol is None:
            a = matern52(self.x_train, self.x_train, self.lengthscales, self.signal_variance)
            a = a + np.diag(self.noise + _JITTER)
            self._chol = cho_factor(a, lower=True)
        return self._chol

    def predict(self, x):
        """Posterior mean and variance of the log-variance surface at ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        c = self._factor()
        k_star = matern52(x, self.x_train, self.lengthscales, self.signal_variance)
        resid = self.y_train - self.beta
        mean = self.beta + k_star @ cho_solve(c, resid)
        var = self.signal_variance - np.einsum("ij,ji->i", k_star, cho_solve(c, k_star.T))
        return mean, np.maximum(var, 0.0)


def _nll_and_beta(theta, x, y, noise):
    """Negative log marginal likelihood with the constant mean profiled out."""
    ell = np.exp(theta[:-1])
    tau2 = np.exp(theta[-1])
    a = matern52(x, x, ell, tau2) + np.diag(noise + _JITTER)
    try:
        low = cholesky(a, lower=True)
    except np.linalg.LinAlgError:
        return np.inf, 0.0
    c = (low, True)
    ones = np.ones(len(y))
    ainv_y = cho_solve(c, y)
    ainv_1 = cho_solve(c, ones)
    beta = float(ones @ ainv_y) / float(ones @ ainv_1)
    resid = y - beta
    nll = 0.5 * float(resid @ cho_solve(c, resid))
    nll += float(np.log(np.diag(low)).sum())
    nll += 0.5 * len(y) * np.log(2.0 * np.pi)
    return nll, beta


def _fit_single(x, y, noise, n_starts: int = 8, tol: float = 1e-8) -> SegmentGP:
    dim = x.shape[1]
    var_y = max(float(np.var(y)), 1e-6)
    # space-filling grid of starting points over (lengthscale, signal variance)
    ell_grid = [0.1, 0.3, 0.8, 2.0]
    tau_grid = [var_y, 4.0 * var_y]
    starts = [
        np.array([np.log(ell)] * dim + [np.log(tau)])
        for tau in tau_grid
        for ell in ell_grid
    ][:n_starts]
    bounds = [(np.log(1e-2), np.log(1e2))] * dim + [(np.log(var_y * 1e-4), np.log(var_y * 1e4))]

    best = None
    for theta0 in starts:
        res = minimize(
            lambda th: _nll_and_beta(th, x, y, noise)[0],
            theta0,
            method="L-BFGS-B",
            bounds=bounds,
            options={"ftol": tol, "gtol": 1e-10, "maxiter": 500},
        )
        if best is None or res.fun < best.fun:
            best = res
    if not np.isfinite(best.fun):
        raise ValueError("GP fit failed: kernel matrix indefinite at every start")
    nll, beta = _nll_and_beta(best.x, x, y, noise)
    return SegmentGP(
        x_train=x,
        y_train=y,
        noise=noise,
        lengthscales=np.exp(best.x[:-1]),
        signal_variance=float(np.exp(best.x[-1])),
        beta=beta,
        log_marginal_likelihood=-nll,
    )


# --------------------------------------------------------------------------
# Emulator


@dataclass
class GpEmulator:
    """Per-segment (default) or per-slice GP models of log account variance."""

    models: dict  # segment -> SegmentGP, or (segment, y0) -> SegmentGP in slice mode
    mode: str = "segment"  # "segment" (3 GPs, 3 features) or "slice" (6 GPs, 2 features)
    prediction: str = "median"  # "median" -> exp(m); "mean" -> exp(m + s^2/2)

    def features_for(self, b_tilde, c_tilde, segment, y0, credit=None):
        if self.mode == "segment":
            return _features(b_tilde, c_tilde, segment, y0, credit=credit)
        return np.column_stack([np.atleast_1d(b_tilde), np.atleast_1d(c_tilde)])

    def _model_key(self, segment: int, y0: int):
        return segment if self.mode == "segment" else (segment, y0)

    def predict_log(self, b_tilde, c_tilde, segment: int, y0, credit=None):
        """Log-scale posterior mean and variance for points in one segment."""
        key = self._model_key(segment, int(np.atleast_1d(y0)[0]) if self.mode == "slice" else 0)
        if key not in self.models:
            raise ValueError(f"no fitted model for {key!r}")
        x = self.features_for(b_tilde, c_tilde, segment, y0, credit=credit)
        return self.models[key].predict(x)

    def predict_sigma2(self, b_tilde, c_tilde, segment: int, y0, credit=None):
        mean, var = self.predict_log(b_tilde, c_tilde, segment, y0, credit=credit)
        if self.prediction == "mean":
            return np.exp(mean + 0.5 * var)
        return np.exp(mean)

    # -------------------------------------------------------------- storage

    def to_json(self, path=None):
        def pack(m: SegmentGP):
            return {
                "x_train": m.x_train.tolist(),
                "y_train": m.y_train.tolist(),
                "noise": m.noise.tolist(),
                "lengthscales": m.lengthscales.tolist(),
                "signal_variance": m.signal_variance,
                "beta": m.beta,
                "log_marginal_likelihood": m.log_marginal_likelihood,
            }

        doc = {
            "format_version": _FORMAT_VERSION,
            "mode": self.mode,
            "prediction": self.prediction,
            "models": {
                (str(k) if isinstance(k, int) else f"{k[0]},{k[1]}"): pack(m)
                for k, m in self.models.items()
            },
        }
        if path is not None:
            Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return doc

    @classmethod
    def from_json(cls, path_or_doc) -> "GpEmulator":
        doc = path_or_doc if isinstance(path_or_doc, dict) else json.loads(Path(path_or_doc).read_text())
        if doc.get("format_version") != _FORMAT_VERSION:
            raise ValueError(f"unsupported emulator format: {doc.get('format_version')}")
        models = {}
        for key, m in doc["models"].items():
            k = tuple(int(v) for v in key.split(",")) if "," in key else int(key)
            models[k] = SegmentGP(
                x_train=np.asarray(m["x_train"]),
                y_train=np.asarray(m["y_train"]),
                noise=np.asarray(m["noise"]),
                lengthscales=np.asarray(m["lengthscales"]),
                signal_variance=m["signal_variance"],
                beta=m["beta"],
                log_marginal_likelihood=m["log_marginal_likelihood"],
            )
        return cls(models=models, mode=doc["mode"], prediction=doc["prediction"])


def fit_gp(observations, mode: str = "segment", prediction: str = "median") -> GpEmulator:
    """Fit the emulator from training observations.

    Hyperparameters maximize the log marginal likelihood (multi-start local
    search with the constant mean profiled out); per-point noise variances are
    fixed from the kurtosis law and never re-estimated.
    """
    if mode not in ("segment", "slice"):
        raise ValueError(f"unknown emulator mode {mode!r}")
    groups: dict = {}
    for o in observations:
        key = o.segment if mode == "segment" else (o.segment, o.y0)
        groups.setdefault(key, []).append(o)
    models = {}
    for key, obs in sorted(groups.items(), key=str):
        if len(obs) < 5:
            raise ValueError(f"segment group {key!r} has only {len(obs)} observations; need >= 5")
        b = np.array([o.b_tilde for o in obs])
        c = np.array([o.c_tilde for o in obs])
        y0 = np.array([o.y0 for o in obs])
        if mode == "segment":
            seg = obs[0].segment
            x = _features(b, c, seg, y0)
        else:
            x = np.column_stack([b, c])
        y = np.array([o.log_variance for o in obs])
        noise = np.array([o.noise_variance for o in obs])
        models[key] = _fit_single(x, y, noise)
    return GpEmulator(models=models, mode=mode, prediction=prediction)


def predict_variance(emulator: GpEmulator, account: Account):
    """Predicted collection variance for one account, from its covariates."""
    b_t = balance_cdf(account.balance)
    c_t = credit_cdf(account.credit_score)
    out = emulator.predict_sigma2(
        b_t, c_t, account.segment, int(account.paid_last_month), credit=account.credit_score
    )
    return float(np.atleast_1d(out)[0])


def sigma2_for_population(emulator: GpEmulator, population) -> np.ndarray:
    """Vectorized variance predictions for every account in a population.

    Entries for dependent accounts are filled too (the caller decides which
    to use); predictions group by (segment, y0) for efficiency.
    """
    b_t = balance_cdf(population.balance)
    c_t = np.asarray(credit_cdf(population.credit_score))
    out = np.empty(population.n)
    for s in (1, 2, 3):
        for y in (0, 1):
            mask = (population.segment == s) & (population.paid_last_month == bool(y))
            if mask.any():
                out[mask] = emulator.predict_sigma2(
                    b_t[mask], c_t[mask], s, np.full(mask.sum(), y), credit=population.credit_score[mask]
                )
    return out


def validate_emulator(emulator: GpEmulator, test_design: dict, n_realisations: int = 1000, seed: int = 0):
    """Test-set metrics: log-RMSE, sd correlation, 95% credible coverage.

    Each test point is simulated afresh (disjoint seed domain from training);
    credible intervals use posterior variance plus the point's estimated
    noise variance.
    """
    per_segment: dict = {s: {"log_err": [], "pred_sd": [], "samp_sd": [], "covered": []} for s in (1, 2, 3)}
    z975 = 1.959963984540054
    for (s, y), pts in test_design.items():
        for l, (b_t, c_t) in enumerate(pts):
            g = stream(seed, "validate", s, y, l)
            totals = _simulate_point(b_t, c_t, s, y, n_realisations, g)
            v = float(totals.var(ddof=1))
            if _degenerate_variance(totals, v):
                continue
            m2 = float(totals.var())
            m4 = float(np.mean((totals - totals.mean()) ** 4))
            noise = max((m4 / m2**2 - 1.0) / n_realisations, 0.0)
            mean, var = emulator.predict_log(b_t, c_t, s, np.array([y]))
            mean, var = float(mean[0]), float(var[0])
            rec = per_segment[s]
            rec["log_err"].append(mean - np.log(v))
            rec["pred_sd"].append(np.sqrt(float(np.atleast_1d(emulator.predict_sigma2(b_t, c_t, s, np.array([y])))[0])))
            rec["samp_sd"].append(np.sqrt(v))
            half = z975 * np.sqrt(var + noise)
            rec["covered"].append(abs(np.log(v) - mean) <= half)

    def summarize(rec):
        if not rec["log_err"]:
            return None
        pred, samp = np.asarray(rec["pred_sd"]), np.asarray(rec["samp_sd"])
        return {
            "n": len(pred),
            "log_rmse": float(np.sqrt(np.mean(np.asarray(rec["log_err"]) ** 2))),
            "sd_correlation": float(np.corrcoef(pred, samp)[0, 1]),
            "credible_coverage": float(np.mean(rec["covered"])),
        }

    pooled = {k: sum((per_segment[s][k] for s in (1, 2, 3)), []) for k in per_segment[1]}
    return {
        "per_segment": {s: summarize(per_segment[s]) for s in (1, 2, 3)},
        "pooled": summarize(pooled),
    }
