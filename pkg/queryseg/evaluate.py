'''Inference and dataset evaluation.

Predictions come from the last decoder stage. Evaluation fans out one job
per image on a thread pool; nothing is recorded for autodiff outside a tape,
so workers only read the shared parameters.
'''

from collections import namedtuple
import asyncio

import numpy as np
from scipy import special

from . import tensor as T
from .async_helpers import gather_coalescing_exceptions, run_in_pool, \
    thread_pool
from .config import DEFAULT_THRESHOLDS
from .dataset import check_vocabulary, load_image
from .error import error_context
from . import metrics
from .model import prepare_image, resize_mask
from .rle import rle_decode

Prediction = namedtuple('Prediction', [
    'mask', 'category', 'score', 'attributes', 'attribute_scores', 'query'
])

SINGLE_THRESHOLD = (0.5, )


def predict(model, pixels, image_size, score_threshold=None):
    '''Instances found in a float [3,H,W] image, by descending score.

    Masks are upsampled to the input resolution and binarized at
    probability 0.5. The score is the highest class probability and the
    category its argmax; attributes are those with probability above 0.5.
    Queries with empty masks are dropped, and so are queries scoring below
    score_threshold when one is given.'''
    height, width = pixels.shape[1:]
    image, (scaled_h, scaled_w) = prepare_image(pixels, image_size)
    clamp = model.cfg.clamp
    stage = model(image)[-1]
    padded_h, padded_w = image.shape[1:]
    logits = T.bilinear_resize(stage.mask_logits, padded_h, padded_w).data
    masks = logits[:, :scaled_h, :scaled_w] > 0

    class_probs = special.expit(np.clip(stage.class_logits.data, -clamp,
                                        clamp))
    attr_probs = special.expit(np.clip(stage.attr_logits.data, -clamp, clamp))
    predictions = []
    for query in range(masks.shape[0]):
        mask = resize_mask(masks[query], height, width)
        score = float(class_probs[query].max())
        if not mask.any():
            continue
        if score_threshold is not None and score < score_threshold:
            continue
        predictions.append(
            Prediction(
                mask=mask,
                category=int(class_probs[query].argmax()),
                score=score,
                attributes=tuple(np.flatnonzero(attr_probs[query] > 0.5)
                                 .tolist()),
                attribute_scores=tuple(attr_probs[query].tolist()),
                query=query))
    predictions.sort(key=lambda p: -p.score)
    return predictions


def ground_truths_for(dataset, record):
    return [
        metrics.GroundTruth(record.id, rle_decode(i.mask_rle), i.category,
                            i.attributes)
        for i in dataset.instances_for(record.id)
    ]


def evaluate_record(model, dataset, record, image_size):
    with error_context('image {} ({})', record.id, record.file):
        pixels = load_image(dataset.image_path(record))
        detections = [
            metrics.Detection(record.id, p.mask, p.category, p.score,
                              p.attributes)
            for p in predict(model, pixels, image_size)
        ]
        return metrics.evaluate_image(record.id, detections,
                                      ground_truths_for(dataset, record))


async def evaluate_async(model, dataset, image_size, jobs, display, *,
                         verbose=False):
    semaphore = asyncio.BoundedSemaphore(jobs)

    async def one(executor, record):
        with display.get_handle(record.file) as handle:
            evaluation = await run_in_pool(executor, semaphore,
                                           evaluate_record, model, dataset,
                                           record, image_size)
            handle.write('{} detections, {} ground truths\n'.format(
                len(evaluation.det_scores), len(evaluation.gt_categories)))
            return evaluation

    with thread_pool(jobs) as executor:
        return (await gather_coalescing_exceptions(
            [one(executor, record) for record in dataset.images],
            display, verbose=verbose))


async def evaluate(model, vocabulary, dataset, eval_cfg, image_size,
                   display, *, jobs=None, single_threshold=False,
                   verbose=False):
    '''Runs the model over every image of the dataset and returns the
    EvalReport.'''
    check_vocabulary(vocabulary, dataset.vocabulary)
    evaluations = await evaluate_async(model, dataset, image_size,
                                       jobs or eval_cfg.jobs, display,
                                       verbose=verbose)
    if single_threshold:
        iou_thresholds = f1_thresholds = SINGLE_THRESHOLD
    else:
        iou_thresholds = eval_cfg.iou_thresholds or DEFAULT_THRESHOLDS
        f1_thresholds = eval_cfg.f1_thresholds or DEFAULT_THRESHOLDS
    return metrics.merge_report(evaluations, vocabulary, iou_thresholds,
                                f1_thresholds)
