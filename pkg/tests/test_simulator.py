"""Repayment path simulation: hand-traced oracles and draw discipline."""

import math

import numpy as np
import pytest

from collsim.population import Account, init_population
from collsim.simulator import (
    DEFAULT_SCHEDULE,
    HORIZON,
    RealisationPlan,
    TransitionSchedule,
    _simulate_block_realisation,
    payment_probability,
    run_plan,
    simulate_dependent_block,
    simulate_independent,
)


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


class _StubRng:
    """Feeds a preset uniform array to the simulators."""

    def __init__(self, u):
        self.u = np.asarray(u, dtype=float)

    def random(self, shape):
        assert self.u.shape == tuple(shape), (self.u.shape, shape)
        return self.u


def _account(balance, credit, segment, y0=False, eligible=False, id=0):
    return Account(
        id=id, balance=balance, credit_score=credit, segment=segment, eligible=eligible, paid_last_month=y0
    )


class TestPaymentProbability:
    def test_hand_values(self):
        # segment intercept/slope pairs: (-1, 0.1), (0, 0.4), (-4, 0.2); +2 if paid last month
        assert payment_probability(0.0, 1, False) == pytest.approx(sigmoid(-1.0), abs=1e-15)
        assert payment_probability(2.0, 1, True) == pytest.approx(sigmoid(-1 + 0.2 + 2), abs=1e-15)
        assert payment_probability(-5.0, 2, False) == pytest.approx(sigmoid(-2.0), abs=1e-15)
        assert payment_probability(10.0, 3, True) == pytest.approx(0.5, abs=1e-15)

    def test_vectorized(self):
        p = payment_probability(np.array([0.0, 2.0]), np.array([1, 2]), np.array([False, True]))
        assert p == pytest.approx([sigmoid(-1.0), sigmoid(2.8)])

    def test_invalid_segment(self):
        with pytest.raises(ValueError):
            payment_probability(0.0, 4, False)


class TestIndependentPath:
    def test_hand_traced_path(self):
        # balance 120, credit 0, segment 1: p0 = sigmoid(-1), p1 = sigmoid(1)
        u = np.full((1, HORIZON), 0.99)
        u[0, :6] = [0.1, 0.9, 0.5, 0.2, 0.3, 0.01]
        path = simulate_independent(_account(120.0, 0.0, 1), rng=_StubRng(u))
        # t1: pay 50 (u=0.1 < 0.2689); t2: no (0.9 > 0.7311); t3: no (0.5 > 0.2689)
        # t4: pay 50 (0.2 < 0.2689); t5: pay min(50, 20) = 20; t6: balance 0, absorbed
        expected = np.zeros(HORIZON)
        expected[[0, 3, 4]] = [50.0, 50.0, 20.0]
        assert np.array_equal(path.monthly, expected)
        assert path.total == 120.0

    def test_absorption_is_permanent(self):
        # pay every month until exhausted; draws keep being consumed but no payments follow
        u = np.zeros((1, HORIZON))
        path = simulate_independent(_account(130.0, 5.0, 2), rng=_StubRng(u))
        assert np.array_equal(path.monthly[:3], [50.0, 50.0, 30.0])
        assert np.all(path.monthly[3:] == 0.0)
        assert path.total == 130.0

    def test_total_never_exceeds_balance(self):
        acc = _account(700.0, 3.0, 2)
        for k in range(5):
            path = simulate_independent(acc, seed=1, realisation=k)
            assert path.total <= 700.0 + 1e-9

    def test_fixed_draw_consumption(self):
        # realisation k from the unit stream equals row k of one bulk draw
        acc = _account(700.0, 3.0, 2, id=17)
        from collsim.rng import stream

        bulk = stream(5, "sim", 17).random((4, HORIZON))
        for k in range(4):
            direct = simulate_independent(acc, seed=5, realisation=k)
            via_rng = simulate_independent(acc, rng=_StubRng(bulk[k : k + 1]))
            assert np.array_equal(direct.monthly, via_rng.monthly)


class TestBlockTransitions:
    def _block(self, credits, schedule, u):
        n = len(credits)
        return _simulate_block_realisation(
            balance=np.full(n, 5000.0),
            credit=np.asarray(credits, dtype=float),
            segment=np.full(n, 3),
            eligible=np.ones(n, dtype=bool),
            y0=np.zeros(n, dtype=bool),
            schedule=schedule,
            u=u,
        )

    def test_best_credit_transitions_at_scheduled_month(self):
        # capacity 1 at month 2: only the best credit score (index 1) moves to segment 1.
        # At month 2 its payment probability jumps from sigmoid(-4+0.4) to sigmoid(-1+0.2);
        # a draw of 0.1 pays only in the transitioned state.
        schedule = TransitionSchedule(times=(2,), capacities=(1,))
        u = np.full((HORIZON, 3), 0.99)
        u[1] = [0.1, 0.1, 0.1]
        monthly = self._block([1.0, 2.0, 0.5], schedule, u)
        assert monthly[1, 1] == 50.0  # transitioned, pays
        assert monthly[0, 1] == 0.0 and monthly[2, 1] == 0.0  # still segment 3

    def test_prior_month_payers_not_eligible_for_transition(self):
        # account 1 pays in month 1, so despite the best score it cannot transition at month 2
        schedule = TransitionSchedule(times=(2,), capacities=(1,))
        u = np.full((HORIZON, 2), 0.99)
        p3 = payment_probability(2.0, 3, False)
        u[0] = [0.99, p3 / 2]  # only account 1 pays in month 1
        u[1] = [0.1, 0.1]
        monthly = self._block([1.0, 2.0], schedule, u)
        assert monthly[1, 0] == 50.0
        # account 0 transitioned instead: p = sigmoid(-1 + 0.1) > 0.1 so it pays
        assert monthly[0, 1] == 50.0

    def test_tie_break_prefers_lower_index(self):
        schedule = TransitionSchedule(times=(2,), capacities=(1,))
        u = np.full((HORIZON, 2), 0.99)
        u[1] = [0.25, 0.25]  # pays only under segment-1 probability sigmoid(-0.6) = 0.354
        monthly = self._block([2.0, 2.0], schedule, u)
        assert monthly[0, 1] == 50.0
        assert monthly[1, 1] == 0.0

    def test_capacity_limits_transitions(self):
        schedule = TransitionSchedule(times=(2,), capacities=(2,))
        u = np.full((HORIZON, 4), 0.99)
        u[1] = [0.25, 0.25, 0.25, 0.25]
        monthly = self._block([1.0, 3.0, 2.0, 0.5], schedule, u)
        # best two scores (indices 1 and 2) transition and pay
        assert monthly[1, 1] == 50.0 and monthly[2, 1] == 50.0
        assert monthly[0, 1] == 0.0 and monthly[3, 1] == 0.0

    def test_no_schedule_means_no_transitions(self):
        u = np.full((HORIZON, 2), 0.25)
        monthly = self._block([2.0, 2.0], TransitionSchedule.none(), u)
        # segment-3 probability sigmoid(-3.6) = 0.027 < 0.25: never pays
        assert monthly.sum() == 0.0

    def test_default_schedule(self):
        assert DEFAULT_SCHEDULE.times == (6, 12, 18, 24, 30, 36)
        assert DEFAULT_SCHEDULE.capacities == (10,) * 6

    def test_invalid_schedules(self):
        with pytest.raises(ValueError):
            TransitionSchedule(times=(6, 6), capacities=(1, 1))
        with pytest.raises(ValueError):
            TransitionSchedule(times=(0,), capacities=(1,))
        with pytest.raises(ValueError):
            TransitionSchedule(times=(6,), capacities=(1, 2))


class TestRealisationPlan:
    def test_equal_plan(self):
        plan = RealisationPlan.equal(10, 3)
        assert plan.cost == 30.0
        assert plan.is_integer

    def test_validate_block_equality(self):
        pop = init_population(200, (1.0,), seed=3)
        dep = pop.portfolios[0].dependent_ids
        assert len(dep) >= 2  # seed chosen so the block is non-trivial
        counts = np.full(200, 5.0)
        counts[dep[0]] = 7.0
        with pytest.raises(ValueError, match="unequal"):
            RealisationPlan(counts=counts).validate_for(pop)

    def test_validate_sizes_and_positivity(self):
        pop = init_population(10, (1.0,), seed=0)
        with pytest.raises(ValueError):
            RealisationPlan.equal(9, 2).validate_for(pop)
        with pytest.raises(ValueError):
            RealisationPlan(counts=np.zeros(10)).validate_for(pop)

    def test_non_integer_plan_rejected_by_run(self):
        pop = init_population(10, (1.0,), seed=0)
        with pytest.raises(ValueError, match="integer"):
            run_plan(pop, RealisationPlan(counts=np.full(10, 1.5)), seed=0)


class TestRunPlan:
    def test_matches_single_unit_api(self):
        pop = init_population(30, (1.0,), seed=8)
        plan = RealisationPlan.equal(30, 3)
        out = run_plan(pop, plan, seed=21)
        for i in pop.independent_ids[:5]:
            for k in range(3):
                path = simulate_independent(pop.account(i), seed=21, realisation=k)
                assert out.totals[i][k] == pytest.approx(path.total, abs=1e-9)

    def test_block_totals_consistent(self):
        pop = init_population(300, (1.0,), seed=8)
        dep = pop.portfolios[0].dependent_ids
        assert len(dep) >= 2
        out = run_plan(pop, RealisationPlan.equal(300, 4), seed=2)
        blk = out.block_totals[0]
        assert blk.shape == (4,)
        per_account = np.stack([out.totals[i] for i in dep])
        assert blk == pytest.approx(per_account.sum(axis=0), abs=1e-9)

    def test_bitwise_identical_across_workers(self):
        pop = init_population(120, (0.8, 0.2), seed=10)
        plan = RealisationPlan.equal(120, 5)
        o1 = run_plan(pop, plan, seed=3, n_workers=1, store_monthly=True)
        o8 = run_plan(pop, plan, seed=3, n_workers=8, store_monthly=True)
        assert all(np.array_equal(a, b) for a, b in zip(o1.totals, o8.totals))
        assert np.array_equal(o1.monthly_sum, o8.monthly_sum)

    def test_common_random_number_prefix(self):
        pop = init_population(60, (1.0,), seed=10)
        small = run_plan(pop, RealisationPlan.equal(60, 3), seed=3)
        large = run_plan(pop, RealisationPlan.equal(60, 5), seed=3)
        for i in pop.independent_ids:
            assert np.array_equal(small.totals[i], large.totals[i][:3])
        for j, blk in small.block_totals.items():
            assert np.array_equal(blk, large.block_totals[j][:3])

    def test_monthly_stats_match_totals(self):
        pop = init_population(40, (1.0,), seed=5)
        plan = RealisationPlan.equal(40, 6)
        out = run_plan(pop, plan, seed=9, store_monthly=True)
        for i in range(40):
            assert out.monthly_sum[i].sum() == pytest.approx(out.totals[i].sum(), abs=1e-6)

    def test_output_csv(self, tmp_path):
        pop = init_population(5, (1.0,), seed=5)
        out = run_plan(pop, RealisationPlan.equal(5, 2), seed=9)
        path = tmp_path / "totals.csv"
        out.to_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "account_id,realisation,total"
        assert len(lines) == 11
        # money formatted with two decimals
        assert all(len(line.rsplit(".", 1)[1]) == 2 for line in lines[1:])
