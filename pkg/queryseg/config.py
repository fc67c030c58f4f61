from collections import namedtuple

import numpy as np

# 0.50:0.05:0.95, the COCO threshold sweep.
DEFAULT_THRESHOLDS = tuple(float(t) for t in np.round(
    np.linspace(0.5, 0.95, 10), 2))

QUERY_MODES = ('decoupled', 'shared')

ModelConfig = namedtuple('ModelConfig', [
    'queries', 'dim', 'stages', 'heads', 'ffn_dim', 'query_mode',
    'mlr_levels', 'dynamic_conv', 'residual_query', 'multi_layer_render',
    'clamp', 'num_classes', 'num_attributes'
])

LossConfig = namedtuple('LossConfig', [
    'cls', 'mask', 'atr', 'focal_alpha', 'focal_gamma', 'dice_eps'
])

OptimConfig = namedtuple('OptimConfig', [
    'lr', 'warmup', 'weight_decay', 'betas', 'eps', 'steps', 'batch_size',
    'log_every'
])

DataConfig = namedtuple('DataConfig', ['train', 'val', 'image_size', 'repeat'])

EvalConfig = namedtuple('EvalConfig', [
    'score_threshold', 'iou_thresholds', 'f1_thresholds', 'jobs'
])

RunConfig = namedtuple('RunConfig',
                       ['model', 'loss', 'optim', 'data', 'eval', 'seed'])


def default_heads(dim):
    return 8 if dim >= 32 else 4


def with_vocabulary(config, num_classes, num_attributes):
    '''Training fixes the head widths from the dataset vocabulary.'''
    model = config.model._replace(
        num_classes=num_classes, num_attributes=num_attributes)
    return config._replace(model=model)


def to_blob(config):
    '''Plain nested dicts, suitable for YAML or JSON.'''
    blob = {}
    for section in RunConfig._fields:
        value = getattr(config, section)
        if hasattr(value, '_asdict'):
            blob[section] = {
                key: list(v) if isinstance(v, tuple) else v
                for key, v in value._asdict().items()
            }
        else:
            blob[section] = value
    return blob
