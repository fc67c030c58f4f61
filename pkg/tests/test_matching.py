import itertools

import numpy as np

from queryseg.decoder import StagePrediction
from queryseg import losses
from queryseg import matching
from queryseg import tensor as T
import shared


def brute_force_minimum(cost):
    n, m = cost.shape
    if n >= m:
        return min(
            sum(cost[q, g] for g, q in enumerate(queries))
            for queries in itertools.permutations(range(n), m))
    return min(
        sum(cost[q, g] for q, g in enumerate(targets))
        for targets in itertools.permutations(range(m), n))


class HungarianTest(shared.QuerySegTest):
    def test_matches_brute_force(self):
        rng = shared.rng(11)
        for trial in range(200):
            n, m = rng.integers(1, 8, size=2)
            cost = rng.uniform(-1, 1, size=(n, m))
            if trial % 4 == 0:
                # Coarse values make ties common.
                cost = np.round(cost, 1)
            assignment = matching.hungarian(cost)
            self.assertEqual(min(n, m), len(assignment.pairs))
            queries = [q for q, _ in assignment.pairs]
            targets = [g for _, g in assignment.pairs]
            self.assertEqual(sorted(queries), queries)
            self.assertEqual(len(set(targets)), len(targets))
            self.assertEqual(set(range(n)) - set(queries),
                             set(assignment.unmatched_queries))
            self.assertAlmostEqual(brute_force_minimum(cost),
                                   matching.assignment_cost(cost, assignment),
                                   delta=1e-9)

    def test_scaling_costs_keeps_the_assignment(self):
        rng = shared.rng(12)
        for _ in range(50):
            n, m = rng.integers(1, 8, size=2)
            cost = rng.uniform(-1, 1, size=(n, m))
            expected = matching.hungarian(cost).pairs
            for factor in (0.5, 3.0, 1000.0):
                self.assertEqual(expected,
                                 matching.hungarian(cost * factor).pairs)

    def test_ties_go_to_the_lowest_queries(self):
        assignment = matching.hungarian(np.zeros((6, 2)))
        self.assertEqual([0, 1], [q for q, _ in assignment.pairs])
        self.assertEqual(frozenset(range(2, 6)),
                         assignment.unmatched_queries)
        assignment = matching.hungarian(np.full((5, 3), 0.25))
        self.assertEqual([0, 1, 2], [q for q, _ in assignment.pairs])

    def test_no_ground_truth(self):
        assignment = matching.hungarian(np.zeros((4, 0)))
        self.assertEqual([], assignment.pairs)
        self.assertEqual(frozenset(range(4)), assignment.unmatched_queries)

    def test_rejects_bad_costs(self):
        with self.assertRaises(matching.MatchingError):
            matching.hungarian(np.array([[0.0, np.nan]]))
        with self.assertRaises(matching.MatchingError):
            matching.hungarian(np.array([[np.inf]]))
        with self.assertRaises(matching.MatchingError):
            matching.hungarian(np.zeros(3))

    def test_identity_is_optimal(self):
        cost = np.ones((3, 3)) - np.eye(3)
        assignment = matching.hungarian(cost)
        self.assertEqual([(0, 0), (1, 1), (2, 2)], assignment.pairs)


class MatchCostTest(shared.QuerySegTest):
    def setUp(self):
        rng = shared.rng(5)
        self.stage = StagePrediction(
            T.Tensor(rng.normal(size=(3, 6, 6)) * 3),
            T.Tensor(rng.normal(size=(3, 4))),
            T.Tensor(rng.normal(size=(3, 2))), None)
        masks = rng.uniform(size=(2, 6, 6)) > 0.5
        self.targets = losses.Targets(masks, np.array([3, 1]),
                                      np.zeros((2, 2)))
        self.cfg = shared.default_loss_config()

    def test_cost_agrees_with_losses(self):
        cost = matching.match_cost(self.stage, self.targets, self.cfg)
        self.assertEqual((3, 2), cost.shape)
        classes = self.stage.class_logits.shape[1]
        for q in range(3):
            logits = self.stage.class_logits[q]
            for g in range(2):
                positive = np.zeros(classes)
                positive[self.targets.labels[g]] = 1.0
                cls = classes * (
                    losses.focal_loss(logits, positive).item() -
                    losses.focal_loss(logits, np.zeros(classes)).item())
                mask_logits = self.stage.mask_logits[q]
                gt = self.targets.masks[g]
                mask = (losses.focal_loss(mask_logits, gt).item() +
                        losses.dice_loss(mask_logits, gt).item())
                self.assertAlmostEqual(cls + mask, cost[q, g], delta=1e-9)

    def test_weights_scale_terms(self):
        cls_only = matching.match_cost(self.stage, self.targets,
                                       self.cfg._replace(mask=0.0))
        mask_only = matching.match_cost(self.stage, self.targets,
                                        self.cfg._replace(cls=0.0))
        both = matching.match_cost(self.stage, self.targets, self.cfg)
        self.assertAllClose(both, cls_only + mask_only)

    def test_empty_targets(self):
        empty = losses.Targets(np.zeros((0, 6, 6), dtype=bool),
                               np.zeros(0, dtype=int), np.zeros((0, 2)))
        cost = matching.match_cost(self.stage, empty, self.cfg)
        self.assertEqual((3, 0), cost.shape)
