'''Mask AP, the joint mask+attribute AP, and the gap between them.

Evaluation follows the COCO conventions: detections are visited in
descending score order and each one greedily takes the best unmatched ground
truth that satisfies the true-positive rule, precision is interpolated at 101
recall points, and AP is averaged over a threshold grid and then over
categories. The joint metric adds a second rule: the F1 of the predicted
attribute set against the ground truth's must also reach a threshold, and
both grids are swept.
'''

from collections import namedtuple
import itertools

import numpy as np

from .config import DEFAULT_THRESHOLDS
from .error import PrintableError
from .rle import rle_decode

Detection = namedtuple(
    'Detection', ['image_id', 'mask', 'category', 'score', 'attributes'])
GroundTruth = namedtuple('GroundTruth',
                         ['image_id', 'mask', 'category', 'attributes'])

# Per-image match tables. Everything downstream is computed from these, so
# images can be evaluated independently and merged at the end.
ImageEvaluation = namedtuple('ImageEvaluation', [
    'image_id', 'det_scores', 'det_categories', 'det_areas', 'gt_categories',
    'gt_areas', 'ious', 'f1s'
])

CategoryAP = namedtuple('CategoryAP',
                        ['name', 'supercategory', 'ap_iou', 'ap_iou_f1'])

EvalReport = namedtuple('EvalReport', [
    'ap_iou', 'ap_iou_f1', 'gap_g', 'ap50', 'ap75', 'ap50_f1', 'ap75_f1',
    'ap_small', 'ap_medium', 'ap_large', 'mean_attribute_f1', 'per_category',
    'per_supercategory', 'num_images', 'num_detections', 'num_ground_truths'
])

RECALL_GRID = np.linspace(0.0, 1.0, 101)

# COCO area buckets, defined for images whose longer side is 640 pixels.
REFERENCE_EXTENT = 640
AREA_RANGES = {
    'small': (0, 32**2),
    'medium': (32**2, 96**2),
    'large': (96**2, float('inf')),
}


class MetricError(PrintableError):
    pass


def as_raster(mask):
    if isinstance(mask, dict):
        return rle_decode(mask)
    return np.asarray(mask, dtype=bool)


def mask_iou(a, b):
    a, b = as_raster(a), as_raster(b)
    if a.shape != b.shape:
        raise MetricError('Mask extents differ: {} and {}.', a.shape, b.shape)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(a, b).sum() / union)


def attribute_f1(pred, gt):
    pred, gt = set(pred), set(gt)
    if not pred and not gt:
        return 1.0
    if not pred or not gt:
        return 0.0
    hits = len(pred & gt)
    if hits == 0:
        return 0.0
    precision = hits / len(pred)
    recall = hits / len(gt)
    return 2 * precision * recall / (precision + recall)


def _pairwise_iou(det_masks, gt_masks):
    if not det_masks or not gt_masks:
        return np.zeros((len(det_masks), len(gt_masks)))
    dets = np.stack([m.ravel() for m in det_masks]).astype(np.float64)
    gts = np.stack([m.ravel() for m in gt_masks]).astype(np.float64)
    overlap = dets @ gts.T
    union = dets.sum(axis=1)[:, None] + gts.sum(axis=1)[None, :] - overlap
    return np.divide(overlap, union, out=np.zeros_like(overlap),
                     where=union > 0)


def evaluate_image(image_id, detections, ground_truths):
    '''Builds the match tables of one image.'''
    det_masks = [as_raster(d.mask) for d in detections]
    gt_masks = [as_raster(g.mask) for g in ground_truths]
    shapes = {m.shape for m in det_masks + gt_masks}
    if len(shapes) > 1:
        raise MetricError('Image {} has masks of different extents: {}',
                          image_id, ', '.join(str(s) for s in sorted(shapes)))
    extent = max(next(iter(shapes))) if shapes else REFERENCE_EXTENT
    # Areas are rescaled to the reference resolution of the COCO buckets.
    scale = (REFERENCE_EXTENT / extent)**2
    f1s = np.array([[attribute_f1(d.attributes, g.attributes)
                     for g in ground_truths] for d in detections])
    return ImageEvaluation(
        image_id=image_id,
        det_scores=np.array([d.score for d in detections], dtype=np.float64),
        det_categories=np.array([d.category for d in detections], dtype=int),
        det_areas=np.array([m.sum() * scale for m in det_masks]),
        gt_categories=np.array([g.category for g in ground_truths],
                               dtype=int),
        gt_areas=np.array([m.sum() * scale for m in gt_masks]),
        ious=_pairwise_iou(det_masks, gt_masks),
        f1s=f1s.reshape(len(detections), len(ground_truths)))


def evaluate_images(detections, ground_truths):
    image_ids = sorted({d.image_id for d in detections} |
                       {g.image_id for g in ground_truths})
    return [
        evaluate_image(image_id,
                       [d for d in detections if d.image_id == image_id],
                       [g for g in ground_truths if g.image_id == image_id])
        for image_id in image_ids
    ]


def _outside(areas, area_range):
    if area_range is None:
        return np.zeros(len(areas), dtype=bool)
    low, high = area_range
    return (areas < low) | (areas >= high)


def match_category(evaluations, category, iou_threshold, f1_threshold=None,
                   area_range=None):
    '''Greedy matching of one category at one threshold pair.

    Returns (scores, is_tp, num_gt, pairs). Detections matched to an ignored
    ground truth, and unmatched detections outside the area range, are left
    out. pairs holds (evaluation index, det index, gt index) of every true
    positive.'''
    scores, is_tp, pairs = [], [], []
    num_gt = 0
    for e, ev in enumerate(evaluations):
        dets = np.flatnonzero(ev.det_categories == category)
        gts = np.flatnonzero(ev.gt_categories == category)
        gt_ignored = _outside(ev.gt_areas[gts], area_range)
        det_ignored = _outside(ev.det_areas[dets], area_range)
        num_gt += int((~gt_ignored).sum())
        matched = np.zeros(len(gts), dtype=bool)
        order = np.argsort(-ev.det_scores[dets], kind='mergesort')
        for d in order:
            det = dets[d]
            ious = ev.ious[det, gts]
            ok = (ious >= iou_threshold) & ~matched
            if f1_threshold is not None:
                ok &= ev.f1s[det, gts] >= f1_threshold
            # Regular ground truths win over ignored ones.
            candidates = ok & ~gt_ignored
            if not candidates.any():
                candidates = ok
            if candidates.any():
                g = int(np.argmax(np.where(candidates, ious, -1.0)))
                matched[g] = True
                if gt_ignored[g]:
                    continue
                scores.append(ev.det_scores[det])
                is_tp.append(True)
                pairs.append((e, int(det), int(gts[g])))
            elif not det_ignored[d]:
                scores.append(ev.det_scores[det])
                is_tp.append(False)
    return scores, is_tp, num_gt, pairs


def interpolated_precision(scores, is_tp, num_gt):
    '''101-point interpolated AP of a ranked list, or None without ground
    truth.'''
    if num_gt == 0:
        return None
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind='mergesort')
    tp = np.asarray(is_tp, dtype=bool)[order]
    if tp.size == 0:
        return 0.0
    tps = np.cumsum(tp)
    fps = np.cumsum(~tp)
    recall = tps / num_gt
    precision = tps / (tps + fps)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    index = np.searchsorted(recall, RECALL_GRID, side='left')
    sampled = np.where(index < len(recall),
                       envelope[np.minimum(index, len(recall) - 1)], 0.0)
    return float(sampled.mean())


def category_ap(evaluations, category, iou_thresholds, f1_thresholds=None,
                area_range=None):
    '''AP averaged over the IoU grid, or over the IoU x F1 product grid for
    the joint rule. None when the category has no ground truth.'''
    if f1_thresholds is None:
        grid = [(t, None) for t in iou_thresholds]
    else:
        grid = list(itertools.product(iou_thresholds, f1_thresholds))
    values = []
    for iou_threshold, f1_threshold in grid:
        scores, is_tp, num_gt, _ = match_category(
            evaluations, category, iou_threshold, f1_threshold, area_range)
        ap = interpolated_precision(scores, is_tp, num_gt)
        if ap is None:
            return None
        values.append(ap)
    return float(np.mean(values))


def average_precision(detections, ground_truths, iou_thresholds=None,
                      f1_thresholds=None):
    '''AP of a single category. The true-positive rule is IoU >= t, plus
    attribute F1 >= t' when f1_thresholds are given.'''
    if iou_thresholds is None:
        iou_thresholds = DEFAULT_THRESHOLDS
    categories = {d.category for d in detections} | {
        g.category for g in ground_truths}
    if len(categories) > 1:
        raise MetricError('average_precision takes one category, got {}.',
                          sorted(categories))
    if not ground_truths:
        return 0.0
    evaluations = evaluate_images(detections, ground_truths)
    category = next(iter(categories))
    return category_ap(evaluations, category, iou_thresholds, f1_thresholds)


def _mean(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def mean_matched_attribute_f1(evaluations, categories, iou_threshold=0.5):
    f1s = []
    for category in categories:
        _, _, _, pairs = match_category(evaluations, category, iou_threshold)
        f1s.extend(evaluations[e].f1s[d, g] for e, d, g in pairs)
    return float(np.mean(f1s)) if f1s else 0.0


def merge_report(evaluations, vocabulary, iou_thresholds=DEFAULT_THRESHOLDS,
                 f1_thresholds=DEFAULT_THRESHOLDS):
    '''Reduces per-image evaluations to an EvalReport. Categories without
    applicable attributes are left out of every joint average.'''
    categories = range(len(vocabulary.categories))
    with_attributes = [c for c in categories if vocabulary.applicability[c]]

    def per_category(iou_grid, f1_grid=None, area_range=None):
        chosen = categories if f1_grid is None else with_attributes
        return {
            c: category_ap(evaluations, c, iou_grid, f1_grid, area_range)
            for c in chosen
        }

    ap_iou_by_cat = per_category(iou_thresholds)
    ap_f1_by_cat = per_category(iou_thresholds, f1_thresholds)
    ap_iou = _mean(ap_iou_by_cat.values()) or 0.0
    ap_iou_f1 = _mean(ap_f1_by_cat.values()) or 0.0

    rows = tuple(
        CategoryAP(name, vocabulary.supercategories[c], ap_iou_by_cat[c],
                   ap_f1_by_cat.get(c))
        for c, name in enumerate(vocabulary.categories))
    supers = []
    for name in dict.fromkeys(s for s in vocabulary.supercategories if s):
        members = [row for row in rows if row.supercategory == name]
        supers.append(
            CategoryAP(name, name, _mean(r.ap_iou for r in members),
                       _mean(r.ap_iou_f1 for r in members)))

    def bucket(name):
        return _mean(per_category(iou_thresholds,
                                  area_range=AREA_RANGES[name]).values())

    return EvalReport(
        ap_iou=ap_iou,
        ap_iou_f1=ap_iou_f1,
        gap_g=ap_iou - ap_iou_f1,
        ap50=_mean(per_category((0.5, )).values()) or 0.0,
        ap75=_mean(per_category((0.75, )).values()) or 0.0,
        ap50_f1=_mean(per_category((0.5, ), f1_thresholds).values()) or 0.0,
        ap75_f1=_mean(per_category((0.75, ), f1_thresholds).values()) or 0.0,
        ap_small=bucket('small'),
        ap_medium=bucket('medium'),
        ap_large=bucket('large'),
        mean_attribute_f1=mean_matched_attribute_f1(evaluations, categories),
        per_category=rows,
        per_supercategory=tuple(supers),
        num_images=len(evaluations),
        num_detections=sum(len(ev.det_scores) for ev in evaluations),
        num_ground_truths=sum(len(ev.gt_categories) for ev in evaluations))


def eval_report(detections, ground_truths, vocabulary,
                iou_thresholds=DEFAULT_THRESHOLDS,
                f1_thresholds=DEFAULT_THRESHOLDS):
    return merge_report(evaluate_images(detections, ground_truths),
                        vocabulary, iou_thresholds, f1_thresholds)


def _cell(value):
    return '-' if value is None else '{:.3f}'.format(value)


def format_report(report):
    '''The report as a plain text table.'''
    lines = [
        '{:<16}{:>10}{:>14}{:>8}'.format('', 'AP_IoU', 'AP_IoU+F1', 'G'),
        '{:<16}{:>10}{:>14}{:>8}'.format('all', _cell(report.ap_iou),
                                         _cell(report.ap_iou_f1),
                                         _cell(report.gap_g)),
        '{:<16}{:>10}{:>14}'.format('@IoU=0.50', _cell(report.ap50),
                                    _cell(report.ap50_f1)),
        '{:<16}{:>10}{:>14}'.format('@IoU=0.75', _cell(report.ap75),
                                    _cell(report.ap75_f1)),
        '',
    ]
    for title, rows in (('category', report.per_category),
                        ('supercategory', report.per_supercategory)):
        if not rows:
            continue
        lines.append('{:<16}{:>10}{:>14}'.format(title, 'AP_IoU',
                                                 'AP_IoU+F1'))
        for row in rows:
            lines.append('{:<16}{:>10}{:>14}'.format(
                row.name, _cell(row.ap_iou), _cell(row.ap_iou_f1)))
        lines.append('')
    lines.append('APs {}  APm {}  APl {}'.format(_cell(report.ap_small),
                                                 _cell(report.ap_medium),
                                                 _cell(report.ap_large)))
    lines.append('mean attribute F1 @IoU=0.50: {}'.format(
        _cell(report.mean_attribute_f1)))
    lines.append('{} images, {} detections, {} ground truths'.format(
        report.num_images, report.num_detections, report.num_ground_truths))
    return '\n'.join(lines) + '\n'


def report_items(report):
    '''Flat (key, value) pairs for the key-value report file.'''
    items = [(field, getattr(report, field))
             for field in EvalReport._fields
             if field not in ('per_category', 'per_supercategory')]
    for prefix, rows in (('category', report.per_category),
                         ('supercategory', report.per_supercategory)):
        for row in rows:
            items.append(('{}.{}.ap_iou'.format(prefix, row.name), row.ap_iou))
            items.append(('{}.{}.ap_iou_f1'.format(prefix, row.name),
                          row.ap_iou_f1))
    return [(key, '-' if value is None else str(value))
            for key, value in items]
