from collections import namedtuple

import numpy as np

from . import tensor as T
from .error import PrintableError
from .matching import hungarian, match_cost
from .model import resize_mask
from .rle import rle_decode

# Ground truth of one image, rasterized at the mask-logit resolution.
# masks: bool [G,h,w]; labels: int [G]; attributes: float [G,A] of 0/1.
Targets = namedtuple('Targets', ['masks', 'labels', 'attributes'])


class LossBreakdown(
        namedtuple('LossBreakdown', ['l_cls', 'l_mask', 'l_atr', 'total'])):
    '''Per-stage loss terms (tuples of scalar Tensors) and the weighted
    total summed over stages.'''

    def as_dict(self):
        return {
            'total': self.total.item(),
            'l_cls': [t.item() for t in self.l_cls],
            'l_mask': [t.item() for t in self.l_mask],
            'l_atr': [t.item() for t in self.l_atr],
        }


class LossError(PrintableError):
    pass


def focal_loss(logits, targets, alpha=0.25, gamma=2.0, clamp=T.LOGIT_CLAMP):
    '''Mean sigmoid focal loss over all elements.'''
    targets = np.asarray(targets, dtype=np.float64)
    if logits.shape != targets.shape:
        raise LossError('Focal loss shapes differ: logits {}, targets {}.',
                        logits.shape, targets.shape)
    x = T.clamp(logits, -clamp, clamp)
    p = T.sigmoid(x)
    p_t = p * targets + (1.0 - p) * (1.0 - targets)
    log_p_t = (T.log_sigmoid(x) * targets +
               T.log_sigmoid(-x) * (1.0 - targets))
    alpha_t = alpha * targets + (1.0 - alpha) * (1.0 - targets)
    return T.reduce_mean(-(alpha_t * (1.0 - p_t)**gamma * log_p_t))


def dice_loss(mask_logits, gt_mask, eps=1.0, clamp=T.LOGIT_CLAMP):
    '''Soft dice loss of [H,W] logits, or the mean over instances of
    [M,H,W] logits.'''
    gt_mask = np.asarray(gt_mask, dtype=np.float64)
    if mask_logits.shape != gt_mask.shape:
        raise LossError('Dice loss shapes differ: logits {}, targets {}.',
                        mask_logits.shape, gt_mask.shape)
    p = T.sigmoid(T.clamp(mask_logits, -clamp, clamp))
    pixel_axes = (-2, -1)
    overlap = T.reduce_sum(p * gt_mask, axis=pixel_axes)
    total = T.reduce_sum(p, axis=pixel_axes) + gt_mask.sum(axis=pixel_axes)
    return T.reduce_mean(1.0 - (2.0 * overlap + eps) / (total + eps))


def attribute_bce(attr_logits, gt_attrs, clamp=T.LOGIT_CLAMP):
    '''Mean binary cross-entropy over the attribute vocabulary.'''
    gt_attrs = np.asarray(gt_attrs, dtype=np.float64)
    if attr_logits.shape != gt_attrs.shape:
        raise LossError('Attribute loss shapes differ: logits {}, '
                        'targets {}.', attr_logits.shape, gt_attrs.shape)
    x = T.clamp(attr_logits, -clamp, clamp)
    return T.reduce_mean(-(T.log_sigmoid(x) * gt_attrs +
                           T.log_sigmoid(-x) * (1.0 - gt_attrs)))


def stage_loss(stage, targets, loss_cfg, clamp=T.LOGIT_CLAMP):
    '''Matches this stage on its own, then returns (l_cls, l_mask, l_atr).'''
    assignment = hungarian(match_cost(stage, targets, loss_cfg, clamp))
    alpha, gamma = loss_cfg.focal_alpha, loss_cfg.focal_gamma

    # Unmatched queries are supervised towards an all-zero class vector.
    cls_targets = np.zeros(stage.class_logits.shape)
    for query, target in assignment.pairs:
        cls_targets[query, targets.labels[target]] = 1.0
    l_cls = focal_loss(stage.class_logits, cls_targets, alpha, gamma, clamp)

    if not assignment.pairs:
        return l_cls, T.Tensor(0.0), T.Tensor(0.0)

    queries = np.array([q for q, _ in assignment.pairs])
    matched = np.array([g for _, g in assignment.pairs])
    masks = stage.mask_logits[queries]
    gt_masks = targets.masks[matched].astype(np.float64)
    l_mask = (focal_loss(masks, gt_masks, alpha, gamma, clamp) +
              dice_loss(masks, gt_masks, loss_cfg.dice_eps, clamp))
    l_atr = attribute_bce(stage.attr_logits[queries],
                          targets.attributes[matched], clamp)
    return l_cls, l_mask, l_atr


def total_loss(stages, targets, loss_cfg, clamp=T.LOGIT_CLAMP):
    if not stages:
        raise LossError('total_loss needs at least one stage.')
    l_cls, l_mask, l_atr = [], [], []
    total = T.Tensor(0.0)
    for stage in stages:
        cls_term, mask_term, atr_term = stage_loss(stage, targets, loss_cfg,
                                                   clamp)
        l_cls.append(cls_term)
        l_mask.append(mask_term)
        l_atr.append(atr_term)
        total = total + (loss_cfg.cls * cls_term + loss_cfg.mask * mask_term +
                         loss_cfg.atr * atr_term)
    return LossBreakdown(tuple(l_cls), tuple(l_mask), tuple(l_atr), total)


def rasterize_targets(instances, scaled_extent, padded_extent,
                      num_attributes, stride=4):
    '''Targets at the mask-logit resolution. Each mask is resized to the
    network input and zero-padded, and a cell is set when the mask covers
    at least half of it. A mask too thin to cover half of any cell keeps
    its best covered cells instead of vanishing.'''
    height, width = scaled_extent
    padded_height, padded_width = padded_extent
    masks, labels = [], []
    attributes = np.zeros((len(instances), num_attributes))
    for i, instance in enumerate(instances):
        mask = resize_mask(rle_decode(instance.mask_rle), height, width)
        padded = np.zeros((padded_height, padded_width))
        padded[:height, :width] = mask
        coverage = padded.reshape(padded_height // stride, stride,
                                  padded_width // stride,
                                  stride).mean(axis=(1, 3))
        cells = coverage >= 0.5
        if not cells.any() and coverage.any():
            cells = coverage == coverage.max()
        masks.append(cells)
        labels.append(instance.category)
        attributes[i, list(instance.attributes)] = 1.0
    if not masks:
        masks = np.zeros((0, padded_height // stride, padded_width // stride),
                         dtype=bool)
    return Targets(np.array(masks, dtype=bool),
                   np.array(labels, dtype=int), attributes)
