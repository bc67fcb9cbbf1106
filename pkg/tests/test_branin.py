"""Tests for the constrained Branin-Hoo benchmark."""

import math

import numpy as np
import pytest

from cbolt import branin as bb


class TestBranin:
    def test_feasible_minimum_value(self):
        assert bb.branin(math.pi, 2.275) == pytest.approx(0.397887, abs=1e-6)

    def test_three_minima_are_equal(self):
        values = [bb.branin(x1, x2) for x1, x2 in bb.GLOBAL_MINIMA]
        for v in values:
            assert v == pytest.approx(values[0], abs=1e-5)

    def test_origin_closed_form(self):
        # f(0, 0) = 36 + 10 (1 - 1/(8 pi)) + 10
        expected = 36.0 + 10.0 * (1.0 - 1.0 / (8.0 * math.pi)) + 10.0
        assert bb.branin(0.0, 0.0) == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(55.60, abs=0.005)

    def test_global_lower_bound_on_dense_grid(self):
        x1 = np.linspace(-5.0, 10.0, 1000)
        x2 = np.linspace(0.0, 15.0, 1000)
        g1, g2 = np.meshgrid(x1, x2, indexing="ij")
        vals = (
            (g2 - (5.1 / (4 * math.pi**2)) * g1**2 + (5 / math.pi) * g1 - 6.0) ** 2
            + 10.0 * (1.0 - 1.0 / (8 * math.pi)) * np.cos(g1)
            + 10.0
        )
        assert vals.min() >= 0.397887 - 1e-6


class TestDiskConstraint:
    def test_feasible_minimum(self):
        assert bb.disk_constraint(math.pi, 2.275)
        dist_sq = (math.pi - 2.5) ** 2 + (2.275 - 7.5) ** 2
        assert dist_sq == pytest.approx(27.71, abs=0.01)

    def test_eliminated_minima(self):
        assert not bb.disk_constraint(-math.pi, 12.275)
        dist_sq = (-math.pi - 2.5) ** 2 + (12.275 - 7.5) ** 2
        assert dist_sq == pytest.approx(54.63, abs=0.01)
        assert not bb.disk_constraint(9.42478, 2.475)

    def test_center_is_feasible(self):
        assert bb.disk_constraint(2.5, 7.5)

    def test_exactly_one_minimum_feasible(self):
        flags = [bb.disk_constraint(x1, x2) for x1, x2 in bb.GLOBAL_MINIMA]
        assert sum(flags) == 1
        assert flags[1]


class TestCoupledEvaluate:
    def test_feasible_minimum(self):
        obj, sat = bb.coupled_evaluate(math.pi, 2.275)
        assert obj == pytest.approx(0.3979, abs=1e-4)
        assert sat

    def test_infeasible_minimum(self):
        obj, sat = bb.coupled_evaluate(-math.pi, 12.275)
        assert obj == pytest.approx(0.3979, abs=1e-4)
        assert not sat

    def test_origin(self):
        obj, sat = bb.coupled_evaluate(0.0, 0.0)
        assert obj == pytest.approx(55.60, abs=0.005)
        assert not sat
        assert (0.0 - 2.5) ** 2 + (0.0 - 7.5) ** 2 == 62.5

    def test_pure_and_deterministic(self):
        first = bb.coupled_evaluate(1.234, 5.678)
        for _ in range(5):
            assert bb.coupled_evaluate(1.234, 5.678) == first


class TestBraninProblem:
    def test_bounds(self):
        problem = bb.BraninProblem()
        np.testing.assert_array_equal(
            problem.bounds, np.array([[-5.0, 10.0], [0.0, 15.0]])
        )

    def test_evaluate_matches_coupled(self):
        problem = bb.BraninProblem()
        obj, sat = problem.evaluate(np.array([math.pi, 2.275]))
        assert (obj, sat) == bb.coupled_evaluate(math.pi, 2.275)

    def test_evaluate_rejects_bad_shape(self):
        problem = bb.BraninProblem()
        with pytest.raises(ValueError):
            problem.evaluate(np.array([1.0, 2.0, 3.0]))
