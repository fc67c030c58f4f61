import math

import numpy as np

from queryseg.dataset import InstanceAnnotation
from queryseg.decoder import StagePrediction
from queryseg import losses
from queryseg.rle import rle_encode
from queryseg import tensor as T
import shared


def random_stage(rng, queries=3, classes=3, attributes=4, extent=8):
    return StagePrediction(
        T.Tensor(rng.normal(size=(queries, extent, extent)) * 2),
        T.Tensor(rng.normal(size=(queries, classes))),
        T.Tensor(rng.normal(size=(queries, attributes))), None)


def block_targets(extent=8, num_attributes=4):
    masks = np.zeros((2, extent, extent), dtype=bool)
    masks[0, :4, :4] = True
    masks[1, 4:, 2:] = True
    attributes = np.array([[1, 0, 0, 1], [0, 1, 1, 0]], dtype=float)
    return losses.Targets(masks, np.array([1, 2]), attributes)


class LossFixtureTest(shared.QuerySegTest):
    def test_focal_loss_at_half(self):
        loss = losses.focal_loss(T.Tensor([0.0]), [1.0], alpha=0.25,
                                 gamma=2.0)
        self.assertAlmostEqual(0.25 * 0.25 * math.log(2), loss.item(),
                               delta=1e-9)

    def test_focal_loss_negative_target(self):
        loss = losses.focal_loss(T.Tensor([0.0]), [0.0])
        self.assertAlmostEqual(0.75 * 0.25 * math.log(2), loss.item(),
                               delta=1e-9)

    def test_focal_loss_is_finite_when_confident(self):
        loss = losses.focal_loss(T.Tensor([1e6, -1e6]), [0.0, 1.0])
        self.assertTrue(math.isfinite(loss.item()))

    def test_dice_half_overlap(self):
        gt = np.zeros((4, 4))
        gt[:, :2] = 1
        pred = np.full((4, 4), -T.LOGIT_CLAMP)
        pred[:2, :] = T.LOGIT_CLAMP
        loss = losses.dice_loss(T.Tensor(pred), gt, eps=0.0)
        self.assertAlmostEqual(0.5, loss.item(), delta=1e-6)

    def test_dice_perfect_and_batched(self):
        gt = np.zeros((2, 4, 4))
        gt[0, :2] = 1
        gt[1, 2:] = 1
        perfect = np.where(gt > 0, T.LOGIT_CLAMP, -T.LOGIT_CLAMP)
        self.assertAlmostEqual(
            0.0, losses.dice_loss(T.Tensor(perfect), gt, eps=0.0).item(),
            delta=1e-9)
        # Instance losses 0 and 1 average to one half.
        wrong = perfect.copy()
        wrong[1] = -wrong[1]
        self.assertAlmostEqual(
            0.5, losses.dice_loss(T.Tensor(wrong), gt, eps=0.0).item(),
            delta=1e-9)

    def test_attribute_bce_at_zero(self):
        loss = losses.attribute_bce(T.zeros((3, 6)),
                                    shared.rng().integers(0, 2, (3, 6)))
        self.assertAlmostEqual(math.log(2), loss.item(), delta=1e-9)

    def test_attribute_bce_one_quarter(self):
        # sigmoid(ln 3) = 3/4.
        loss = losses.attribute_bce(T.Tensor([[math.log(3)]]), [[1.0]])
        self.assertAlmostEqual(math.log(4 / 3), loss.item(), delta=1e-9)

    def test_shape_mismatch(self):
        with self.assertRaises(losses.LossError):
            losses.focal_loss(T.zeros((2, 3)), np.zeros((3, 2)))
        with self.assertRaises(losses.LossError):
            losses.dice_loss(T.zeros((4, 4)), np.zeros((4, 5)))
        with self.assertRaises(losses.LossError):
            losses.attribute_bce(T.zeros((2, 3)), np.zeros((2, 4)))


class StageLossTest(shared.QuerySegTest):
    def setUp(self):
        self.cfg = shared.default_loss_config()

    def test_no_ground_truth(self):
        stage = random_stage(shared.rng())
        empty = losses.Targets(np.zeros((0, 8, 8), dtype=bool),
                               np.zeros(0, dtype=int), np.zeros((0, 4)))
        l_cls, l_mask, l_atr = losses.stage_loss(stage, empty, self.cfg)
        expected = losses.focal_loss(stage.class_logits, np.zeros((3, 3)))
        self.assertAlmostEqual(expected.item(), l_cls.item())
        self.assertEqual(0.0, l_mask.item())
        self.assertEqual(0.0, l_atr.item())

    def test_total_is_weighted_sum_over_stages(self):
        rng = shared.rng(2)
        stages = [random_stage(rng) for _ in range(3)]
        cfg = self.cfg._replace(cls=2.0, mask=0.5, atr=3.0)
        breakdown = losses.total_loss(stages, block_targets(), cfg)
        expected = sum(2.0 * c.item() + 0.5 * m.item() + 3.0 * a.item()
                       for c, m, a in zip(breakdown.l_cls, breakdown.l_mask,
                                          breakdown.l_atr))
        self.assertAlmostEqual(expected, breakdown.total.item())
        self.assertEqual(3, len(breakdown.as_dict()['l_mask']))

    def test_segmentation_only_baseline(self):
        stages = [random_stage(shared.rng(3))]
        cfg = self.cfg._replace(atr=0.0)
        breakdown = losses.total_loss(stages, block_targets(), cfg)
        self.assertGreater(breakdown.l_atr[0].item(), 0.0)
        self.assertAlmostEqual(
            breakdown.l_cls[0].item() + breakdown.l_mask[0].item(),
            breakdown.total.item())

    def test_needs_a_stage(self):
        with self.assertRaises(losses.LossError):
            losses.total_loss([], block_targets(), self.cfg)

    def test_rasterize_targets(self):
        mask = np.zeros((40, 40), dtype=bool)
        mask[:10, 20:] = True
        instance = InstanceAnnotation(1, rle_encode(mask), 2, (0, 3))
        targets = losses.rasterize_targets([instance], (40, 40), (64, 64),
                                           num_attributes=5)
        self.assertEqual((1, 16, 16), targets.masks.shape)
        expected = np.zeros((16, 16), dtype=bool)
        expected[:3, 5:10] = True
        self.assertTrue(np.array_equal(expected, targets.masks[0]))
        self.assertEqual([2], targets.labels.tolist())
        self.assertEqual([[1, 0, 0, 1, 0]], targets.attributes.tolist())

    def test_rasterize_keeps_half_covered_cells(self):
        mask = np.zeros((32, 32), dtype=bool)
        # Rows 3..12: a quarter of cells 0 and 3, all of cells 1 and 2.
        mask[3:13, 3:13] = True
        # A one-pixel sliver covers no cell by half.
        sliver = np.zeros((32, 32), dtype=bool)
        sliver[21, 17] = True
        instances = [InstanceAnnotation(1, rle_encode(mask), 0, ()),
                     InstanceAnnotation(1, rle_encode(sliver), 1, ())]
        targets = losses.rasterize_targets(instances, (32, 32), (32, 32),
                                           num_attributes=2)
        expected = np.zeros((8, 8), dtype=bool)
        expected[1:3, 1:3] = True
        self.assertTrue(np.array_equal(expected, targets.masks[0]))
        expected = np.zeros((8, 8), dtype=bool)
        expected[5, 4] = True
        self.assertTrue(np.array_equal(expected, targets.masks[1]))

    def test_rasterize_no_instances(self):
        targets = losses.rasterize_targets([], (32, 32), (32, 32), 4)
        self.assertEqual((0, 8, 8), targets.masks.shape)
        self.assertEqual((0, 4), targets.attributes.shape)
