from collections import namedtuple
import json
import math
import os
import zlib

import numpy as np

from . import config as cfg
from . import tensor as T
from .checkpoint import Checkpoint
from .dataset import VocabularyError, check_vocabulary, load_image
from .error import PrintableError
from .losses import rasterize_targets, total_loss
from .model import Model, prepare_image
from .optim import AdamW

Sample = namedtuple('Sample', ['image', 'targets'])
TrainResult = namedtuple('TrainResult', ['checkpoint', 'log'])

LOSS_LOG_FILE_NAME = 'losses.jsonl'


class TrainingError(PrintableError):
    pass


def training_config(run_config, vocabulary):
    '''Fixes the head widths from the dataset vocabulary. Widths given in
    the config must agree with it.'''
    model = run_config.model
    num_classes = len(vocabulary.categories)
    num_attributes = len(vocabulary.attributes)
    for field, found in (('num_classes', num_classes),
                         ('num_attributes', num_attributes)):
        configured = getattr(model, field)
        if configured and configured != found:
            raise VocabularyError(
                'model.{} is {}, but the dataset defines {}.', field,
                configured, found)
    if num_classes == 0 or num_attributes == 0:
        raise VocabularyError('The training set defines no categories or no '
                              'attributes.')
    return cfg.with_vocabulary(run_config, num_classes, num_attributes)


def load_samples(dataset, image_size):
    num_attributes = len(dataset.vocabulary.attributes)
    samples = []
    for record in dataset.images:
        pixels = load_image(dataset.image_path(record))
        image, scaled = prepare_image(pixels, image_size)
        targets = rasterize_targets(
            dataset.instances_for(record.id), scaled, image.shape[1:],
            num_attributes)
        samples.append(Sample(image, targets))
    return samples


def batch_order(seed, num_samples, repeat):
    '''An endless stream of sample indices: the training set repeated
    `repeat` times, reshuffled on every pass.'''
    rng = np.random.Generator(
        np.random.PCG64(
            np.random.SeedSequence(entropy=seed,
                                   spawn_key=(zlib.crc32(b'data'), ))))
    indices = np.repeat(np.arange(num_samples), repeat)
    while True:
        for index in rng.permutation(indices):
            yield int(index)


def check_finite(breakdowns, step):
    for breakdown in breakdowns:
        for term in ('l_cls', 'l_mask', 'l_atr'):
            for stage, value in enumerate(getattr(breakdown, term), start=1):
                if not math.isfinite(value.item()):
                    raise TrainingError(
                        'Loss is {} at step {}: stage {}, term {}.',
                        value.item(), step, stage, term)


def _log_entry(step, lr, breakdowns):
    entries = [b.as_dict() for b in breakdowns]
    return {
        'step': step,
        'lr': lr,
        'total': float(np.mean([e['total'] for e in entries])),
        'l_cls': np.mean([e['l_cls'] for e in entries], axis=0).tolist(),
        'l_mask': np.mean([e['l_mask'] for e in entries], axis=0).tolist(),
        'l_atr': np.mean([e['l_atr'] for e in entries], axis=0).tolist(),
    }


def format_log_entry(entry, steps):
    return 'step {}/{} total={:.4f} cls={:.4f} mask={:.4f} atr={:.4f} ' \
        'lr={:.2e}'.format(entry['step'] + 1, steps, entry['total'],
                           sum(entry['l_cls']), sum(entry['l_mask']),
                           sum(entry['l_atr']), entry['lr'])


def restore(checkpoint, model, optimizer, run_config, vocabulary):
    '''Loads parameters and optimizer moments from a checkpoint of the same
    model. Returns the step to continue from.'''
    check_vocabulary(checkpoint.vocabulary, vocabulary)
    if checkpoint.config.model != run_config.model:
        raise TrainingError('The checkpoint was trained with a different '
                            'model config.')
    if checkpoint.step > run_config.optim.steps:
        raise TrainingError('The checkpoint is at step {}, past optim.steps '
                            '({}).', checkpoint.step, run_config.optim.steps)
    model.store.load_state(checkpoint.parameters)
    optimizer.load_state(checkpoint.optimizer, checkpoint.step)
    return checkpoint.step


def train(run_config, dataset, handle=None, log_path=None, samples=None,
          resume=None):
    '''Trains from scratch, or from the Checkpoint `resume` on. Progress
    lines go to the display handle, and every step's losses to the
    JSON-lines file at log_path. Returns the final Checkpoint and the loss
    log of the steps run here.'''
    run_config = training_config(run_config, dataset.vocabulary)
    optim_cfg = run_config.optim
    model = Model(run_config.model, run_config.seed)
    optimizer = AdamW(model.store, optim_cfg)
    start = 0
    if resume is not None:
        start = restore(resume, model, optimizer, run_config,
                        dataset.vocabulary)
    if samples is None:
        samples = load_samples(dataset, run_config.data.image_size)
    if optim_cfg.steps and not samples:
        raise TrainingError('The training set has no images.')

    log = []
    log_file = open(log_path, 'a' if start else 'w') if log_path else None
    try:
        order = batch_order(run_config.seed, len(samples),
                            run_config.data.repeat)
        # Skip the batches the resumed run already trained on.
        for _ in range(start * optim_cfg.batch_size):
            next(order)
        for step in range(start, optim_cfg.steps):
            batch = [samples[next(order)] for _ in range(optim_cfg.batch_size)]
            model.store.zero_grad()
            with T.Tape():
                breakdowns = [
                    total_loss(model(sample.image), sample.targets,
                               run_config.loss, run_config.model.clamp)
                    for sample in batch
                ]
                check_finite(breakdowns, step)
                loss = breakdowns[0].total
                for breakdown in breakdowns[1:]:
                    loss = loss + breakdown.total
                T.backward(loss / len(batch))
            lr = optimizer.step()

            entry = _log_entry(step, lr, breakdowns)
            log.append(entry)
            if log_file:
                log_file.write(json.dumps(entry) + '\n')
            last = step == optim_cfg.steps - 1
            if handle and (step % optim_cfg.log_every == 0 or last):
                handle.write(format_log_entry(entry, optim_cfg.steps) + '\n')
    finally:
        if log_file:
            log_file.close()

    checkpoint = Checkpoint(run_config, dataset.vocabulary,
                            optimizer.step_count, model.store.state(),
                            optimizer.state())
    return TrainResult(checkpoint, log)


def resolve_data_path(config_path, data_path):
    '''Data paths in a config file are relative to that file.'''
    if data_path is None or os.path.isabs(data_path):
        return data_path
    return os.path.join(os.path.dirname(os.path.abspath(config_path)),
                        data_path)
