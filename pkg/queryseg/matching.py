'''Bipartite matching between predicted queries and ground-truth instances.

Costs are plain numpy: no gradient flows through the assignment.
'''

from collections import namedtuple

import numpy as np
from scipy import optimize, special

from .error import PrintableError
from .tensor import LOGIT_CLAMP

MatchAssignment = namedtuple('MatchAssignment', ['pairs', 'unmatched_queries'])


class MatchingError(PrintableError):
    pass


def _focal_terms(logits, alpha, gamma, clamp):
    '''Per-element focal loss against a positive and against a negative
    target.'''
    x = np.clip(logits, -clamp, clamp)
    p = special.expit(x)
    positive = alpha * (1 - p)**gamma * np.logaddexp(0, -x)
    negative = (1 - alpha) * p**gamma * np.logaddexp(0, x)
    return positive, negative


def match_cost(stage, targets, loss_cfg, clamp=LOGIT_CLAMP):
    '''cost[n, g] of explaining ground truth g with query n.

    The class term is the change in focal loss when query n's logit for g's
    category flips from a negative to a positive target. The mask term is the
    pixel-mean focal loss plus the dice loss of the pair.'''
    num_queries = stage.class_logits.shape[0]
    num_targets = len(targets.labels)
    if num_targets == 0:
        return np.zeros((num_queries, 0))
    alpha, gamma = loss_cfg.focal_alpha, loss_cfg.focal_gamma

    positive, negative = _focal_terms(stage.class_logits.data, alpha, gamma,
                                      clamp)
    cls_cost = (positive - negative)[:, targets.labels]

    logits = stage.mask_logits.data.reshape(num_queries, -1)
    gt = targets.masks.reshape(num_targets, -1).astype(np.float64)
    pixels = logits.shape[1]
    positive, negative = _focal_terms(logits, alpha, gamma, clamp)
    focal_cost = (positive @ gt.T + negative @ (1 - gt).T) / pixels

    probs = special.expit(np.clip(logits, -clamp, clamp))
    eps = loss_cfg.dice_eps
    overlap = probs @ gt.T
    dice_cost = 1 - (2 * overlap + eps) / (
        probs.sum(axis=1)[:, None] + gt.sum(axis=1)[None, :] + eps)

    return loss_cfg.cls * cls_cost + loss_cfg.mask * (focal_cost + dice_cost)


def hungarian(cost):
    '''Minimum-cost one-to-one assignment of min(n, m) pairs, sorted by query
    index.'''
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise MatchingError('Cost matrix must be 2-D, got shape {}.',
                            cost.shape)
    if not np.all(np.isfinite(cost)):
        raise MatchingError('Cost matrix contains non-finite values.')
    num_queries = cost.shape[0]
    if cost.size == 0:
        return MatchAssignment([], frozenset(range(num_queries)))
    rows, cols = optimize.linear_sum_assignment(cost)
    pairs = sorted(zip(rows.tolist(), cols.tolist()))
    matched = {q for q, _ in pairs}
    unmatched = frozenset(q for q in range(num_queries) if q not in matched)
    return MatchAssignment(pairs, unmatched)


def assignment_cost(cost, assignment):
    return float(sum(cost[q, g] for q, g in assignment.pairs))
