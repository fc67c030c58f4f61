import itertools

import numpy as np

from queryseg.config import DEFAULT_THRESHOLDS
from queryseg.dataset import Vocabulary
from queryseg import metrics
from queryseg.rle import rle_encode
import shared

EXTENT = 16
QUADRANTS = ((0, 0), (0, 8), (8, 0), (8, 8))


def box(top, left, height, width, extent=EXTENT):
    mask = np.zeros((extent, extent), dtype=bool)
    mask[top:top + height, left:left + width] = True
    return mask


def det(mask, score, attributes=(), category=0, image_id=1):
    return metrics.Detection(image_id, mask, category, score,
                             tuple(attributes))


def gt(mask, attributes=(), category=0, image_id=1):
    return metrics.GroundTruth(image_id, mask, category, tuple(attributes))


def oracle_ap(detections, ground_truths, iou_threshold, f1_threshold=None):
    '''Single-image, single-category AP from explicit PR points.'''
    ranked = sorted(detections, key=lambda d: -d.score)
    matched = set()
    hits = []
    for d in ranked:
        best, best_iou = None, -1.0
        for g, truth in enumerate(ground_truths):
            if g in matched:
                continue
            iou = metrics.mask_iou(d.mask, truth.mask)
            if iou < iou_threshold:
                continue
            if f1_threshold is not None and metrics.attribute_f1(
                    d.attributes, truth.attributes) < f1_threshold:
                continue
            if iou > best_iou:
                best, best_iou = g, iou
        if best is not None:
            matched.add(best)
        hits.append(best is not None)
    points = []
    tp = 0
    for rank, hit in enumerate(hits, start=1):
        tp += hit
        points.append((tp / len(ground_truths), tp / rank))
    total = 0.0
    for r in range(101):
        level = r / 100
        precisions = [p for recall, p in points if recall >= level - 1e-12]
        total += max(precisions) if precisions else 0.0
    return total / 101


def oracle_grid(detections, ground_truths, f1_grid=None):
    if f1_grid is None:
        grid = [(t, None) for t in DEFAULT_THRESHOLDS]
    else:
        grid = itertools.product(DEFAULT_THRESHOLDS, f1_grid)
    values = [oracle_ap(detections, ground_truths, t, f)
              for t, f in grid]
    return sum(values) / len(values)


def random_box_in(rng, quadrant):
    top, left = quadrant
    height, width = rng.integers(2, 9, size=2)
    row = top + rng.integers(0, 9 - height)
    col = left + rng.integers(0, 9 - width)
    return box(row, col, height, width)


def random_scene(rng):
    '''Ground truths sit in distinct quadrants, and every detection stays
    inside one quadrant, so each detection overlaps at most one ground
    truth.'''
    num_gt = rng.integers(1, 5)
    truths = []
    for quadrant in rng.permutation(4)[:num_gt]:
        attributes = np.flatnonzero(rng.integers(0, 2, 4))
        truths.append(gt(random_box_in(rng, QUADRANTS[quadrant]),
                         attributes))
    dets = []
    for _ in range(rng.integers(0, 11)):
        quadrant = QUADRANTS[rng.integers(4)]
        attributes = np.flatnonzero(rng.integers(0, 2, 4))
        dets.append(det(random_box_in(rng, quadrant), rng.uniform(),
                        attributes))
    return dets, truths


class PrimitiveTest(shared.QuerySegTest):
    def test_mask_iou(self):
        a = box(0, 0, 2, 2, 4)
        b = box(1, 1, 2, 2, 4)
        self.assertAlmostEqual(1 / 7, metrics.mask_iou(a, b))
        self.assertEqual(1.0, metrics.mask_iou(a, a))
        self.assertEqual(0.0, metrics.mask_iou(np.zeros((4, 4), bool),
                                               np.zeros((4, 4), bool)))
        self.assertAlmostEqual(1 / 7, metrics.mask_iou(rle_encode(a), b))
        with self.assertRaises(metrics.MetricError):
            metrics.mask_iou(a, np.zeros((3, 3), bool))

    def test_attribute_f1(self):
        self.assertEqual(0.5, metrics.attribute_f1({0, 1}, {1, 2}))
        self.assertEqual(1.0, metrics.attribute_f1((), ()))
        self.assertEqual(0.0, metrics.attribute_f1((1, ), ()))
        self.assertEqual(0.0, metrics.attribute_f1((1, ), (2, )))
        self.assertEqual(1.0, metrics.attribute_f1((3, 1), (1, 3)))

    def test_interpolated_precision(self):
        self.assertIsNone(metrics.interpolated_precision([], [], 0))
        self.assertEqual(0.0, metrics.interpolated_precision([], [], 2))
        self.assertAlmostEqual(
            1.0, metrics.interpolated_precision([0.9, 0.8], [True, True], 2))


class AveragePrecisionTest(shared.QuerySegTest):
    def test_perfect(self):
        truths = [gt(box(0, 0, 4, 4), (1, )), gt(box(8, 8, 4, 4), (2, ))]
        dets = [det(t.mask, 0.9 - i / 10, t.attributes)
                for i, t in enumerate(truths)]
        self.assertAlmostEqual(1.0, metrics.average_precision(dets, truths))
        self.assertAlmostEqual(
            1.0, metrics.average_precision(dets, truths,
                                           f1_thresholds=DEFAULT_THRESHOLDS))

    def test_empty(self):
        self.assertEqual(0.0, metrics.average_precision([], []))
        self.assertEqual(
            0.0, metrics.average_precision([], [gt(box(0, 0, 4, 4))]))
        self.assertEqual(
            0.0, metrics.average_precision([det(box(0, 0, 4, 4), 0.5)], []))

    def test_false_positive_above_true_positive(self):
        truth = gt(box(0, 0, 4, 4))
        dets = [det(box(8, 8, 4, 4), 0.9), det(truth.mask, 0.8)]
        self.assertAlmostEqual(0.5, metrics.average_precision(dets, [truth]),
                               delta=1e-9)

    def test_rank_only(self):
        rng = shared.rng(8)
        dets, truths = random_scene(rng)
        rescaled = [d._replace(score=d.score**3 * 0.1) for d in dets]
        self.assertAlmostEqual(metrics.average_precision(dets, truths),
                               metrics.average_precision(rescaled, truths),
                               delta=1e-12)

    def test_attribute_rule(self):
        truth = gt(box(0, 0, 4, 4), (0, 1))
        right = det(truth.mask, 0.9, (0, 1))
        wrong = det(truth.mask, 0.9, (2, ))
        f1_grid = DEFAULT_THRESHOLDS
        self.assertAlmostEqual(
            1.0, metrics.average_precision([right], [truth],
                                           f1_thresholds=f1_grid))
        self.assertAlmostEqual(
            0.0, metrics.average_precision([wrong], [truth],
                                           f1_thresholds=f1_grid))
        self.assertAlmostEqual(1.0,
                               metrics.average_precision([wrong], [truth]))

    def test_single_category_only(self):
        with self.assertRaises(metrics.MetricError):
            metrics.average_precision(
                [det(box(0, 0, 2, 2), 0.5, category=1)],
                [gt(box(0, 0, 2, 2), category=0)])

    def test_matches_oracle_on_random_scenes(self):
        rng = shared.rng(2024)
        for trial in range(50):
            dets, truths = random_scene(rng)
            ap_iou = metrics.average_precision(dets, truths)
            self.assertAlmostEqual(oracle_grid(dets, truths), ap_iou,
                                   delta=1e-9, msg='trial {}'.format(trial))
            ap_joint = metrics.average_precision(
                dets, truths, f1_thresholds=DEFAULT_THRESHOLDS)
            self.assertAlmostEqual(oracle_grid(dets, truths,
                                               DEFAULT_THRESHOLDS),
                                   ap_joint, delta=1e-9,
                                   msg='trial {}'.format(trial))
            self.assertLessEqual(ap_joint, ap_iou + 1e-12)


class ReportTest(shared.QuerySegTest):
    def setUp(self):
        self.vocabulary = Vocabulary(
            categories=('circle', 'rect', 'blob'),
            supercategories=('round', 'polygon', 'round'),
            attributes=('striped', 'solid', 'warm'),
            attribute_groups=('texture', 'texture', 'hue'),
            applicability=((0, 1, 2), (0, 1, 2), ()))
        self.truths = [
            gt(box(0, 0, 4, 4), (0, 2), category=0),
            gt(box(8, 8, 4, 4), (1, ), category=1),
            gt(box(0, 8, 4, 4), (), category=2),
        ]

    def test_perfect_report(self):
        dets = [det(t.mask, 0.9, t.attributes, t.category)
                for t in self.truths]
        report = metrics.eval_report(dets, self.truths, self.vocabulary)
        self.assertAlmostEqual(1.0, report.ap_iou)
        self.assertAlmostEqual(1.0, report.ap_iou_f1)
        self.assertAlmostEqual(0.0, report.gap_g)
        self.assertAlmostEqual(1.0, report.mean_attribute_f1)
        self.assertEqual(1, report.num_images)
        self.assertEqual(3, report.num_detections)
        self.assertEqual(3, report.num_ground_truths)
        blob = report.per_category[2]
        self.assertEqual('blob', blob.name)
        self.assertIsNone(blob.ap_iou_f1)
        names = [row.name for row in report.per_supercategory]
        self.assertEqual(['round', 'polygon'], names)

    def test_wrong_attributes_open_a_gap(self):
        dets = [det(t.mask, 0.9, (), t.category) for t in self.truths]
        report = metrics.eval_report(dets, self.truths, self.vocabulary,
                                     iou_thresholds=(0.5, ),
                                     f1_thresholds=(0.5, ))
        self.assertAlmostEqual(1.0, report.ap_iou)
        self.assertAlmostEqual(0.0, report.ap_iou_f1)
        self.assertAlmostEqual(1.0, report.gap_g)
        self.assertGreaterEqual(report.gap_g, 0.0)
        # The blob has no attributes, so its empty prediction scores F1 1.
        self.assertAlmostEqual(1 / 3, report.mean_attribute_f1)

    def test_merge_equals_one_shot(self):
        dets = [det(t.mask, 0.5 + i / 10, t.attributes, t.category,
                    image_id=i) for i, t in enumerate(self.truths)]
        truths = [t._replace(image_id=i) for i, t in enumerate(self.truths)]
        evaluations = [
            metrics.evaluate_image(i, [d for d in dets if d.image_id == i],
                                   [t for t in truths if t.image_id == i])
            for i in range(3)
        ]
        merged = metrics.merge_report(evaluations, self.vocabulary)
        direct = metrics.eval_report(dets, truths, self.vocabulary)
        self.assertEqual(direct.ap_iou, merged.ap_iou)
        self.assertEqual(direct.ap_iou_f1, merged.ap_iou_f1)

    def test_format_and_items(self):
        report = metrics.eval_report([], self.truths, self.vocabulary)
        text = metrics.format_report(report)
        self.assertIn('AP_IoU+F1', text)
        self.assertIn('blob', text)
        items = dict(metrics.report_items(report))
        self.assertEqual('0.0', items['ap_iou'])
        self.assertEqual('-', items['category.blob.ap_iou_f1'])
        self.assertEqual('3', items['num_ground_truths'])
