"""Closed-form budget allocation and rounding."""

import numpy as np
import pytest

from collsim.allocator import (
    AllocationInputs,
    optimal_allocation,
    pilot_block_variance,
    plan_for_population,
    round_counts,
    round_plan,
)
from collsim.population import init_population
from collsim.simulator import DEFAULT_SCHEDULE, RealisationPlan


def _variance(inputs: AllocationInputs, r_ind, r_blk):
    v = float((np.asarray(inputs.sigma_independent) ** 2 / r_ind).sum())
    if len(inputs.sigma_block):
        v += float((np.asarray(inputs.sigma_block) ** 2 / r_blk).sum())
    return v


class TestOptimalAllocation:
    def test_hand_instance(self):
        # sigmas (3, 4), one block with sigma 6 and 4 members:
        # G = 3 + 4 + 2*6 = 19; C = 38 -> scale 2
        inputs = AllocationInputs(
            sigma_independent=np.array([3.0, 4.0]),
            sigma_block=np.array([6.0]),
            block_size=np.array([4]),
            budget=38.0,
        )
        alloc = optimal_allocation(inputs)
        assert alloc.r_independent == pytest.approx([6.0, 8.0])
        assert alloc.r_block == pytest.approx([6.0])  # (6/2) * 2
        assert alloc.total_cost(inputs.block_size) == pytest.approx(38.0)

    def test_kkt_ratio_constant(self):
        # at the optimum, sigma_i^2 / R_i^2 is the same for every unit
        g = np.random.Generator(np.random.Philox(key=5))
        inputs = AllocationInputs(
            sigma_independent=g.uniform(1, 50, size=8),
            sigma_block=g.uniform(1, 50, size=2),
            block_size=np.array([3, 5]),
            budget=500.0,
        )
        alloc = optimal_allocation(inputs)
        ratios = np.concatenate(
            [
                inputs.sigma_independent**2 / alloc.r_independent**2,
                inputs.sigma_block**2 / (np.asarray(inputs.block_size) * alloc.r_block**2),
            ]
        )
        assert np.ptp(ratios) / ratios[0] < 1e-12

    def test_beats_random_plans(self):
        g = np.random.Generator(np.random.Philox(key=6))
        inputs = AllocationInputs(
            sigma_independent=g.uniform(1, 100, size=5),
            sigma_block=np.array([]),
            block_size=np.array([]),
            budget=100.0,
        )
        alloc = optimal_allocation(inputs)
        v_opt = _variance(inputs, alloc.r_independent, alloc.r_block)
        for _ in range(2000):
            w = g.dirichlet(np.ones(5))
            v = _variance(inputs, 100.0 * w, np.array([]))
            assert v >= v_opt * (1 - 1e-12)

    def test_exhausts_budget(self):
        inputs = AllocationInputs(
            sigma_independent=np.array([1.0, 2.0, 3.0]),
            sigma_block=np.array([5.0]),
            block_size=np.array([7]),
            budget=123.0,
        )
        alloc = optimal_allocation(inputs)
        assert alloc.total_cost(inputs.block_size) == pytest.approx(123.0)

    def test_degenerate_raises(self):
        inputs = AllocationInputs(
            sigma_independent=np.zeros(3), sigma_block=np.array([]), block_size=np.array([]), budget=10.0
        )
        with pytest.raises(ValueError, match="degenerate"):
            optimal_allocation(inputs)

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            AllocationInputs(np.array([1.0]), np.array([]), np.array([]), budget=0.0)
        with pytest.raises(ValueError):
            AllocationInputs(np.array([-1.0]), np.array([]), np.array([]), budget=1.0)


class TestRounding:
    def test_rounding_rules(self):
        # fractions below one round up to one; otherwise half away from zero
        out = round_counts([0.001, 0.4, 0.9999, 1.0, 1.4, 1.5, 2.5, 7.49])
        assert list(out) == [1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 3.0, 7.0]

    def test_zero_rounds_to_one(self):
        assert list(round_counts([0.0])) == [1.0]

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            round_counts([-0.1])

    def test_round_plan_keeps_blocks_equal(self):
        pop = init_population(300, (1.0,), seed=8)
        dep = pop.portfolios[0].dependent_ids
        assert len(dep) >= 2
        counts = np.full(300, 2.7)
        counts[dep] = 3.4
        plan = round_plan(RealisationPlan(counts=counts), pop)
        assert np.all(plan.counts[dep] == 3.0)
        plan.validate_for(pop)
        assert plan.is_integer


class TestPlanForPopulation:
    def test_maps_pooled_solution_to_ids(self):
        pop = init_population(200, (0.6, 0.4), seed=12)
        g = np.random.Generator(np.random.Philox(key=7))
        sigma = g.uniform(1, 10, size=200)
        sigma_block = np.full(2, np.nan)
        for j, pf in enumerate(pop.portfolios):
            if len(pf.dependent_ids):
                sigma_block[j] = 20.0 + j
        plan = plan_for_population(pop, sigma, sigma_block, budget=5000.0)
        assert plan.cost == pytest.approx(5000.0)
        # proportionality within the independents
        indep = pop.independent_ids
        ratio = plan.counts[indep] / sigma[indep]
        assert np.ptp(ratio) / ratio[0] < 1e-12
        plan_int = round_plan(plan, pop)
        plan_int.validate_for(pop)


class TestPilotBlockVariance:
    def test_reproducible_and_positive(self):
        pop = init_population(400, (1.0,), seed=8)
        assert len(pop.portfolios[0].dependent_ids) >= 2
        v1 = pilot_block_variance(pop, 0, DEFAULT_SCHEDULE, n_pilot=40, seed=6)
        v2 = pilot_block_variance(pop, 0, DEFAULT_SCHEDULE, n_pilot=40, seed=6)
        assert v1 == v2
        assert v1 > 0

    def test_requires_two_pilots(self):
        pop = init_population(400, (1.0,), seed=8)
        with pytest.raises(ValueError):
            pilot_block_variance(pop, 0, DEFAULT_SCHEDULE, n_pilot=1, seed=6)
