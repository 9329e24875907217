import itertools

import numpy as np
from django.test import SimpleTestCase

from perception.assignment import (
    CostMatrix,
    greedy_match,
    greedy_match_matrix,
    hungarian,
    maximum_weight_matching,
    partial_assignment,
)
from perception.exceptions import Infeasible, InvariantError
from perception.schema import Detection
from perception.tests.factories import make_box


def brute_force_minimum(costs: np.ndarray) -> float:
    n_rows, n_cols = costs.shape
    if n_rows > n_cols:
        return brute_force_minimum(costs.T)
    columns = np.array(list(itertools.permutations(range(n_cols), n_rows)))
    return float(costs[np.arange(n_rows), columns].sum(axis=1).min())


class GreedyTests(SimpleTestCase):
    def test_score_order(self):
        matching = greedy_match_matrix([0.9, 0.8], [[1.0, 0.5], [0.4, 3.0]], gate=2.0)
        self.assertEqual(matching.pairs, ((0, 1), (1, 0)))

    def test_gate(self):
        matching = greedy_match_matrix([0.9], [[2.5]], gate=2.0)
        self.assertEqual(len(matching), 0)
        self.assertEqual(matching.unmatched_rows, (0,))
        self.assertEqual(matching.unmatched_cols, (0,))

    def test_tie_broken_by_distance(self):
        # 同点なら GT に近い予測が先に選ぶ
        matching = greedy_match_matrix([0.5, 0.5], [[1.5], [0.5]], gate=2.0)
        self.assertEqual(matching.pairs, ((1, 0),))

    def test_objects(self):
        preds = [
            Detection(0, 'MAV', 0.3, make_box(0, 0, 10)),
            Detection(0, 'MAV', 0.9, make_box(0.5, 0, 10)),
        ]
        gts = [make_box(0, 0, 10)]
        matching = greedy_match(
            preds, gts, lambda p, g: float(np.linalg.norm(p.pose.position - g.pose.position)), 1.0
        )
        self.assertEqual(matching.pairs, ((1, 0),))

    def test_empty(self):
        matching = greedy_match_matrix([], np.zeros((0, 3)), gate=1.0)
        self.assertEqual(matching.unmatched_cols, (0, 1, 2))


class HungarianTests(SimpleTestCase):
    def test_two_by_two(self):
        costs = CostMatrix([[4.0, 1.0], [2.0, 3.0]])
        matching = hungarian(costs)
        self.assertEqual(matching.pairs, ((0, 1), (1, 0)))
        self.assertEqual(matching.cost(costs), 3.0)

    def test_zero_matrix(self):
        matching = hungarian(CostMatrix(np.zeros((3, 3))))
        self.assertEqual(len(matching), 3)
        self.assertEqual(matching.cost(np.zeros((3, 3))), 0.0)

    def test_against_brute_force(self):
        rng = np.random.default_rng(20240101)
        for _ in range(1000):
            n_rows, n_cols = rng.integers(1, 8, size=2)
            costs = rng.random((n_rows, n_cols))
            matching = hungarian(CostMatrix(costs))
            self.assertEqual(len(matching), min(n_rows, n_cols))
            self.assertAlmostEqual(matching.cost(costs), brute_force_minimum(costs), places=12)

    def test_infeasible(self):
        costs = CostMatrix([[1.0, 2.0], [3.0, 4.0]], forbidden=[[True, True], [False, False]])
        with self.assertRaises(Infeasible):
            hungarian(costs)

    def test_invalid_costs(self):
        with self.assertRaises(InvariantError):
            CostMatrix([[-1.0]])
        with self.assertRaises(InvariantError):
            CostMatrix([1.0, 2.0])


class PartialAssignmentTests(SimpleTestCase):
    def test_gated(self):
        matching = partial_assignment(CostMatrix.gated([[1.0, 10.0], [10.0, 10.0]], 5.0))
        self.assertEqual(matching.pairs, ((0, 0),))
        self.assertEqual(matching.unmatched_rows, (1,))
        self.assertEqual(matching.unmatched_cols, (1,))

    def test_prefers_more_pairs(self):
        # (0,0) 単独より (0,1) + (1,0) の 2 組
        costs = CostMatrix([[1.0, 2.0], [0.5, 0.0]], forbidden=[[False, False], [False, True]])
        self.assertEqual(partial_assignment(costs).pairs, ((0, 1), (1, 0)))

    def test_mutual_candidates_minimize_total(self):
        matching = partial_assignment(CostMatrix.gated([[1.0, 2.0], [1.5, 4.0]], 12.0))
        self.assertEqual(matching.pairs, ((0, 1), (1, 0)))

    def test_empty(self):
        matching = partial_assignment(CostMatrix(np.zeros((2, 0))))
        self.assertEqual(matching.unmatched_rows, (0, 1))


class MaximumWeightTests(SimpleTestCase):
    def test_total_weight(self):
        matching = maximum_weight_matching([[3.0, 2.0], [2.0, 0.0]])
        self.assertEqual(matching.pairs, ((0, 1), (1, 0)))

    def test_allowed_mask(self):
        weights = np.array([[3.0, 2.0], [2.0, 0.0]])
        matching = maximum_weight_matching(weights, weights > 2.5)
        self.assertEqual(matching.pairs, ((0, 0),))
