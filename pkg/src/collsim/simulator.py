"""Month-by-month simulation of account repayment over an 84-month horizon.

Each account follows a logistic Markov payment model: the probability of a
payment in a month depends on the account's credit score, its current segment
and whether it paid in the previous month.  A payment is the lower of 50 and
the outstanding balance, and payments cease permanently once the balance hits
zero.

Accounts in a dependent block are simulated jointly: at each scheduled
transition month, the accounts with the best credit scores among those that
are eligible, currently in segment 3 and did not pay in the preceding month
are moved to segment 1, subject to the schedule's capacity.

Draw discipline: every path consumes exactly ``horizon`` uniforms per account
regardless of early absorption, so realisation ``k`` of a unit always occupies
draw block ``k`` of the unit's stream.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .population import Account, Population
from .rng import stream

__all__ = [
    "HORIZON",
    "DEFAULT_SCHEDULE",
    "TransitionSchedule",
    "CollectionsPath",
    "RealisationPlan",
    "SimulationOutput",
    "payment_probability",
    "simulate_independent",
    "simulate_dependent_block",
    "run_plan",
]

HORIZON = 84
PAYMENT_CAP = 50.0

_INTERCEPTS = np.array([-1.0, 0.0, -4.0])
_SLOPES = np.array([0.1, 0.4, 0.2])


@dataclass(frozen=True)
class TransitionSchedule:
    """Scheduled transition months and their capacities."""

    times: tuple
    capacities: tuple

    def __post_init__(self):
        t = np.asarray(self.times)
        c = np.asarray(self.capacities)
        if len(t) != len(c):
            raise ValueError("times and capacities must have equal length")
        if len(t) and (np.any(np.diff(t) <= 0) or t.min() < 1 or t.max() > HORIZON):
            raise ValueError("times must be strictly increasing within [1, 84]")
        if len(c) and np.any(c < 0):
            raise ValueError("capacities must be non-negative")

    @classmethod
    def none(cls) -> "TransitionSchedule":
        return cls(times=(), capacities=())


DEFAULT_SCHEDULE = TransitionSchedule(times=(6, 12, 18, 24, 30, 36), capacities=(10,) * 6)


def payment_probability(credit_score, segment, paid_prev):
    """Probability of a payment this month, given a positive balance."""
    seg = np.asarray(segment)
    if np.any((seg < 1) | (seg > 3)):
        raise ValueError("segment must be in {1, 2, 3}")
    eta = (
        _INTERCEPTS[seg - 1]
        + _SLOPES[seg - 1] * np.asarray(credit_score, dtype=float)
        + 2.0 * np.asarray(paid_prev, dtype=float)
    )
    out = expit(eta)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CollectionsPath:
    """Monthly collections of one realisation of one account."""

    monthly: np.ndarray

    @property
    def total(self) -> float:
        return float(self.monthly.sum())


# --------------------------------------------------------------------------
# Vectorized path engines


def _simulate_paths(p0, p1, bal0, y0, u, collect_monthly=False):
    """Simulate many independent paths at once.

    All arguments are per-path arrays of length M except ``u`` which is
    (M, horizon).  ``p0``/``p1`` are the payment probabilities given no
    payment / a payment in the previous month (segments never change for
    independent accounts, so these two numbers fully describe the model).
    """
    m, horizon = u.shape
    bal = np.array(bal0, dtype=float, copy=True)
    yprev = np.array(y0, dtype=bool, copy=True)
    totals = np.zeros(m)
    monthly = np.empty((m, horizon)) if collect_monthly else None
    for t in range(horizon):
        p = np.where(yprev, p1, p0)
        y = (u[:, t] < p) & (bal > 0)
        pay = np.where(y, np.minimum(PAYMENT_CAP, bal), 0.0)
        bal -= pay
        totals += pay
        yprev = y
        if collect_monthly:
            monthly[:, t] = pay
    return totals, monthly


def _simulate_block_realisation(balance, credit, segment, eligible, y0, schedule, u):
    """One joint realisation of a dependent block.

    ``u`` has shape (horizon, n_accounts).  Returns the (n, horizon) matrix of
    monthly collections.  Ties in credit score at a transition are broken in
    favour of the lower position index (callers pass accounts in id order).
    """
    horizon, n = u.shape
    bal = balance.astype(float).copy()
    seg = segment.astype(int).copy()
    yprev = y0.astype(bool).copy()
    monthly = np.zeros((n, horizon))
    trans = dict(zip(schedule.times, schedule.capacities))
    for t in range(1, horizon + 1):
        cap = trans.get(t)
        if cap:
            qual = np.flatnonzero(eligible & (seg == 3) & ~yprev)
            if len(qual):
                order = qual[np.lexsort((qual, -credit[qual]))]
                seg[order[:cap]] = 1
        p = payment_probability(credit, seg, yprev)
        y = (u[t - 1] < p) & (bal > 0)
        pay = np.where(y, np.minimum(PAYMENT_CAP, bal), 0.0)
        bal -= pay
        yprev = y
        monthly[:, t - 1] = pay
    return monthly


# --------------------------------------------------------------------------
# Single-unit APIs


def _unit_uniforms(seed, key, realisation, shape):
    """Uniform draw block for realisation ``realisation`` of one unit."""
    g = stream(seed, "sim", *key)
    block = int(np.prod(shape))
    if realisation:
        g.random(realisation * block)  # skip earlier realisations' blocks
    return g.random(shape)


def simulate_independent(account: Account, horizon: int = HORIZON, rng=None, *, seed=None, realisation=0):
    """Simulate one realisation of an account that is not in a dependent block."""
    if rng is None:
        if seed is None:
            raise ValueError("provide either rng or seed")
        u = _unit_uniforms(seed, (account.id,), realisation, (1, horizon))
    else:
        u = rng.random((1, horizon))
    p0 = payment_probability(account.credit_score, account.segment, False)
    p1 = payment_probability(account.credit_score, account.segment, True)
    _, monthly = _simulate_paths(
        np.array([p0]),
        np.array([p1]),
        np.array([account.balance]),
        np.array([account.paid_last_month]),
        u,
        collect_monthly=True,
    )
    return CollectionsPath(monthly=monthly[0])


def simulate_dependent_block(
    accounts, schedule: TransitionSchedule, horizon: int = HORIZON, rng=None, *, seed=None, realisation=0
):
    """Simulate one joint realisation of a dependent block.

    Returns the list of per-account :class:`CollectionsPath` and the realised
    block total.
    """
    n = len(accounts)
    if rng is None:
        if seed is None:
            raise ValueError("provide either rng or seed")
        key = ("block",) + tuple(a.id for a in accounts[:1])
        u = _unit_uniforms(seed, key, realisation, (horizon, n))
    else:
        u = rng.random((horizon, n))
    monthly = _simulate_block_realisation(
        np.array([a.balance for a in accounts]),
        np.array([a.credit_score for a in accounts]),
        np.array([a.segment for a in accounts]),
        np.array([a.eligible for a in accounts]),
        np.array([a.paid_last_month for a in accounts]),
        schedule,
        u,
    )
    paths = [CollectionsPath(monthly=monthly[i]) for i in range(n)]
    return paths, float(monthly.sum())


# --------------------------------------------------------------------------
# Realisation plans


@dataclass(frozen=True)
class RealisationPlan:
    """Per-account realisation counts, equal within each dependent block."""

    counts: np.ndarray

    @property
    def n(self) -> int:
        return len(self.counts)

    @property
    def cost(self) -> float:
        return float(self.counts.sum())

    @property
    def is_integer(self) -> bool:
        return bool(np.all(self.counts == np.round(self.counts)))

    @classmethod
    def equal(cls, n: int, r: int) -> "RealisationPlan":
        return cls(counts=np.full(n, float(r)))

    def validate_for(self, population: Population) -> None:
        if self.n != population.n:
            raise ValueError(f"plan covers {self.n} accounts, population has {population.n}")
        if np.any(self.counts <= 0):
            raise ValueError("plan counts must be positive")
        for j, pf in enumerate(population.portfolios):
            dep = pf.dependent_ids
            if len(dep) and len(np.unique(self.counts[dep])) > 1:
                raise ValueError(f"dependent block of portfolio {j} has unequal counts")

    def block_count(self, population: Population, j: int) -> float:
        dep = population.portfolios[j].dependent_ids
        if not len(dep):
            raise ValueError(f"portfolio {j} has no dependent block")
        return float(self.counts[dep[0]])

    def to_csv(self, population: Population, path, int_counts: np.ndarray | None = None) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["unit_id", "kind", "count_real", "count_int"])
            for j, pf in enumerate(population.portfolios):
                if len(pf.dependent_ids):
                    i0 = pf.dependent_ids[0]
                    w.writerow(
                        [
                            f"block-{j}",
                            "block",
                            repr(float(self.counts[i0])),
                            int(int_counts[i0]) if int_counts is not None else "",
                        ]
                    )
                for i in pf.independent_ids:
                    w.writerow(
                        [
                            int(i),
                            "independent",
                            repr(float(self.counts[i])),
                            int(int_counts[i]) if int_counts is not None else "",
                        ]
                    )


# --------------------------------------------------------------------------
# Plan execution


@dataclass
class SimulationOutput:
    """Realised totals (and optional monthly statistics) from one plan run."""

    totals: list  # per-account arrays of realised totals
    block_totals: dict  # portfolio j -> (r_j,) realised block totals
    horizon: int = HORIZON
    monthly_sum: np.ndarray | None = None  # (N, horizon) sums over realisations
    monthly_sumsq: np.ndarray | None = None
    block_monthly: dict = field(default_factory=dict)  # j -> (r_j, horizon)

    @property
    def n(self) -> int:
        return len(self.totals)

    def counts(self) -> np.ndarray:
        return np.array([len(t) for t in self.totals], dtype=float)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["account_id", "realisation", "total"])
            for i, tot in enumerate(self.totals):
                for k, x in enumerate(tot):
                    w.writerow([i, k, f"{x:.2f}"])

    def summary_json(self, path) -> None:
        from .estimators import sample_moments

        rows = []
        for i, tot in enumerate(self.totals):
            rec = {"account_id": i, "mean": float(np.mean(tot))}
            if len(tot) >= 2:
                rec["variance"] = float(np.var(tot, ddof=1))
            if len(tot) >= 4 and np.var(tot) > 0:
                rec["kurtosis"] = sample_moments(tot).kurtosis
            rows.append(rec)
        with open(path, "w") as f:
            json.dump(rows, f, indent=2)


def run_plan(
    population: Population,
    plan: RealisationPlan,
    schedule: TransitionSchedule = DEFAULT_SCHEDULE,
    seed: int = 0,
    horizon: int = HORIZON,
    store_monthly: bool = False,
    n_workers: int = 1,
) -> SimulationOutput:
    """Execute an integer realisation plan over a population.

    Independent accounts receive ``R_i`` independent realisations each; every
    dependent block is simulated jointly, ``r_j`` times.  Realisation ``k`` of
    a unit always uses draw block ``k`` of the stream keyed by
    ``(seed, unit)``, so output is bitwise identical for any worker count.
    """
    plan.validate_for(population)
    if not plan.is_integer:
        raise ValueError("run_plan requires an integer plan; round it first")
    counts = plan.counts.astype(int)

    n = population.n
    totals: list = [None] * n
    monthly_sum = np.zeros((n, horizon)) if store_monthly else None
    monthly_sumsq = np.zeros((n, horizon)) if store_monthly else None

    indep = population.independent_ids
    offsets = np.concatenate([[0], np.cumsum(counts[indep])])
    m = int(offsets[-1])
    u = np.empty((m, horizon))

    def fill(idx):
        i = indep[idx]
        u[offsets[idx] : offsets[idx + 1]] = stream(seed, "sim", int(i)).random((counts[i], horizon))

    if n_workers > 1 and len(indep):
        with ThreadPoolExecutor(max_workers=n_workers) as ex:
            list(ex.map(fill, range(len(indep))))
    else:
        for idx in range(len(indep)):
            fill(idx)

    p0 = payment_probability(population.credit_score[indep], population.segment[indep], False)
    p1 = payment_probability(population.credit_score[indep], population.segment[indep], True)
    rep = counts[indep]
    path_tot, path_monthly = _simulate_paths(
        np.repeat(p0, rep),
        np.repeat(p1, rep),
        np.repeat(population.balance[indep], rep),
        np.repeat(population.paid_last_month[indep], rep),
        u,
        collect_monthly=store_monthly,
    )
    for idx, i in enumerate(indep):
        sl = slice(int(offsets[idx]), int(offsets[idx + 1]))
        totals[i] = path_tot[sl]
        if store_monthly:
            block = path_monthly[sl]
            monthly_sum[i] = block.sum(axis=0)
            monthly_sumsq[i] = (block**2).sum(axis=0)

    block_totals: dict = {}
    block_monthly: dict = {}

    def run_block(j):
        dep = population.portfolios[j].dependent_ids
        r_j = counts[dep[0]]
        u_j = stream(seed, "sim", "block", j).random((r_j, horizon, len(dep)))
        acc_tot = np.empty((r_j, len(dep)))
        blk_monthly = np.empty((r_j, horizon))
        for k in range(r_j):
            monthly = _simulate_block_realisation(
                population.balance[dep],
                population.credit_score[dep],
                population.segment[dep],
                population.eligible[dep],
                population.paid_last_month[dep],
                schedule,
                u_j[k],
            )
            acc_tot[k] = monthly.sum(axis=1)
            blk_monthly[k] = monthly.sum(axis=0)
            if store_monthly:
                monthly_sum[dep] += monthly
                monthly_sumsq[dep] += monthly**2
        return j, dep, acc_tot, blk_monthly

    block_js = [j for j, pf in enumerate(population.portfolios) if len(pf.dependent_ids)]
    for j, dep, acc_tot, blk_monthly in map(run_block, block_js):
        for pos, i in enumerate(dep):
            totals[i] = acc_tot[:, pos]
        block_totals[j] = acc_tot.sum(axis=1)
        if store_monthly:
            block_monthly[j] = blk_monthly

    return SimulationOutput(
        totals=totals,
        block_totals=block_totals,
        horizon=horizon,
        monthly_sum=monthly_sum,
        monthly_sumsq=monthly_sumsq,
        block_monthly=block_monthly,
    )
