import collections
import sys

import yaml

from . import config as cfg
from .error import PrintableError, error_context

DEFAULT_CONFIG_FILE_NAME = 'config.yaml'


class ParserError(PrintableError):
    pass


def parse_file(file_path):
    try:
        with open(file_path) as f:
            text = f.read()
    except OSError as e:
        raise ParserError("Can't read config file {}: {}", file_path,
                          e.strerror) from e
    with error_context(file_path):
        return parse_string(text)


def parse_string(yaml_str):
    try:
        blob = yaml.safe_load(yaml_str)
    except yaml.YAMLError as e:
        raise ParserError('YAML parser error:\n\n{}', e) from e
    if blob is None:
        blob = {}
    return parse_blob(blob)


def parse_blob(blob):
    '''Builds a RunConfig from nested dicts. The blob is consumed; any field
    left over afterwards is an error.'''
    if not isinstance(blob, dict):
        raise ParserError('Config must be a map, found {}.', repr(blob))
    blob = dict(blob)
    model = _parse_model(_section(blob, 'model'))
    loss = _parse_loss(_section(blob, 'loss'))
    optim = _parse_optim(_section(blob, 'optim'))
    data = _parse_data(_section(blob, 'data'))
    evaluation = _parse_eval(_section(blob, 'eval'))
    seed = _int(blob, 'seed', 0, minimum=0)
    if blob:
        raise ParserError('Unknown toplevel fields: {}',
                          ', '.join(str(k) for k in blob.keys()))
    return cfg.RunConfig(model, loss, optim, data, evaluation, seed)


def _section(blob, name):
    inner = typesafe_pop(blob, name, None)
    inner = {} if inner is None else inner
    if not isinstance(inner, dict):
        raise ParserError('"{}" must be a map, found {}.', name, repr(inner))
    return dict(inner)


def _finish(blob, section):
    if blob:
        raise ParserError('Unknown {} fields: {}', section,
                          ', '.join(str(k) for k in blob.keys()))


def _parse_model(blob):
    dim = _int(blob, 'dim', 32, minimum=1)
    heads = _int(blob, 'heads', cfg.default_heads(dim), minimum=1)
    if dim % heads != 0:
        raise ParserError('model.dim ({}) must be divisible by model.heads '
                          '({}).', dim, heads)
    mlr_levels = _int(blob, 'mlr_levels', 4, minimum=1)
    if mlr_levels > 4:
        raise ParserError('model.mlr_levels must be between 1 and 4, got {}.',
                          mlr_levels)
    query_mode = typesafe_pop(blob, 'query_mode', 'decoupled')
    if query_mode not in cfg.QUERY_MODES:
        raise ParserError('model.query_mode must be one of {}, got {}.',
                          ', '.join(cfg.QUERY_MODES), repr(query_mode))
    model = cfg.ModelConfig(
        queries=_int(blob, 'queries', 10, minimum=1),
        dim=dim,
        stages=_int(blob, 'stages', 3, minimum=1),
        heads=heads,
        ffn_dim=_int(blob, 'ffn_dim', 2 * dim, minimum=1),
        query_mode=query_mode,
        mlr_levels=mlr_levels,
        dynamic_conv=_bool(blob, 'dynamic_conv', True),
        residual_query=_bool(blob, 'residual_query', True),
        multi_layer_render=_bool(blob, 'multi_layer_render', True),
        clamp=_float(blob, 'clamp', 30.0, minimum=0.0),
        num_classes=_int(blob, 'num_classes', 0, minimum=0),
        num_attributes=_int(blob, 'num_attributes', 0, minimum=0))
    _finish(blob, 'model')
    return model


def _parse_loss(blob):
    loss = cfg.LossConfig(
        cls=_float(blob, 'cls', 1.0, minimum=0.0),
        mask=_float(blob, 'mask', 1.0, minimum=0.0),
        atr=_float(blob, 'atr', 1.0, minimum=0.0),
        focal_alpha=_float(blob, 'focal_alpha', 0.25, minimum=0.0),
        focal_gamma=_float(blob, 'focal_gamma', 2.0, minimum=0.0),
        dice_eps=_float(blob, 'dice_eps', 1.0, minimum=0.0))
    _finish(blob, 'loss')
    return loss


def _parse_optim(blob):
    betas = _float_list(blob, 'betas', (0.9, 0.999))
    if len(betas) != 2 or not all(0 <= b < 1 for b in betas):
        raise ParserError('optim.betas must be two numbers in [0, 1).')
    warmup = _float(blob, 'warmup', 0.1, minimum=0.0)
    if warmup > 1:
        raise ParserError('optim.warmup is a fraction of the steps, got {}.',
                          warmup)
    optim = cfg.OptimConfig(
        lr=_float(blob, 'lr', 1e-3, minimum=0.0),
        warmup=warmup,
        weight_decay=_float(blob, 'weight_decay', 1e-4, minimum=0.0),
        betas=betas,
        eps=_float(blob, 'eps', 1e-8, minimum=0.0),
        steps=_int(blob, 'steps', 2000, minimum=0),
        batch_size=_int(blob, 'batch_size', 2, minimum=1),
        log_every=_int(blob, 'log_every', 10, minimum=1))
    _finish(blob, 'optim')
    return optim


def _parse_data(blob):
    data = cfg.DataConfig(
        train=_optional_str(blob, 'train'),
        val=_optional_str(blob, 'val'),
        image_size=_int(blob, 'image_size', 128, minimum=32),
        repeat=_int(blob, 'repeat', 1, minimum=1))
    _finish(blob, 'data')
    return data


def _parse_eval(blob):
    evaluation = cfg.EvalConfig(
        score_threshold=_float(blob, 'score_threshold', 0.5, minimum=0.0),
        iou_thresholds=_float_list(blob, 'iou_thresholds',
                                   cfg.DEFAULT_THRESHOLDS),
        f1_thresholds=_float_list(blob, 'f1_thresholds',
                                  cfg.DEFAULT_THRESHOLDS),
        jobs=_int(blob, 'jobs', 4, minimum=1))
    for name in ('iou_thresholds', 'f1_thresholds'):
        values = getattr(evaluation, name)
        if not values or not all(0 <= v <= 1 for v in values):
            raise ParserError('eval.{} must be a nonempty list of numbers in '
                              '[0, 1].', name)
    _finish(blob, 'eval')
    return evaluation


def _int(blob, name, default, minimum=None):
    value = typesafe_pop(blob, name, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParserError('"{}" must be an integer, found {}.', name,
                          repr(value))
    if minimum is not None and value < minimum:
        raise ParserError('"{}" must be at least {}, found {}.', name,
                          minimum, value)
    return value


def _float(blob, name, default, minimum=None):
    value = typesafe_pop(blob, name, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParserError('"{}" must be a number, found {}.', name,
                          repr(value))
    if minimum is not None and value < minimum:
        raise ParserError('"{}" must be at least {}, found {}.', name,
                          minimum, value)
    return float(value)


def _bool(blob, name, default):
    value = typesafe_pop(blob, name, default)
    if not isinstance(value, bool):
        raise ParserError('"{}" must be true or false, found {}.', name,
                          repr(value))
    return value


def _optional_str(blob, name):
    value = typesafe_pop(blob, name, None)
    if value is not None and not isinstance(value, str):
        raise ParserError('"{}" must be a path, found {}.', name, repr(value))
    return value


def _float_list(blob, name, default):
    '''A single number is accepted in place of a one-element list.'''
    value = typesafe_pop(blob, name, default)
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        value = [value]
    if not isinstance(value, (list, tuple)) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool)
            for v in value):
        raise ParserError('"{}" must be a list of numbers, found {}.', name,
                          repr(value))
    return tuple(float(v) for v in value)


def typesafe_pop(d, field, default=object()):
    if not isinstance(d, dict):
        raise ParserError('Error parsing config: {} is not a map.', repr(d))
    if default == typesafe_pop.__defaults__[0]:
        return d.pop(field)
    else:
        return d.pop(field, default)


# Code for the duplicate keys warning. PyYAML silently keeps the last value
# of a duplicated key, which is an easy way to lose a setting.

DuplicatedKey = collections.namedtuple('DuplicatedKey',
                                       ['key', 'first_line', 'second_line'])


def _get_duplicate_keys_approximate(yaml_text):
    duplicates = []
    # Keys seen so far at each indentation level, with their line numbers.
    seen_at_indent = collections.defaultdict(dict)
    for line_num, line in enumerate(yaml_text.split('\n'), start=1):
        line = line.split('#', 1)[0]
        if ':' not in line:
            continue
        indent = len(line) - len(line.lstrip(' '))
        # Leaving a block forgets every key that was nested inside it.
        for deeper in [i for i in seen_at_indent if i > indent]:
            del seen_at_indent[deeper]
        key = line.split(':')[0].strip()
        if key in seen_at_indent[indent]:
            duplicates.append(
                DuplicatedKey(key, seen_at_indent[indent][key], line_num))
        seen_at_indent[indent][key] = line_num
    return duplicates


def warn_duplicate_keys(file_path, output=None):
    output = output or sys.stderr
    with open(file_path) as f:
        duplicates = _get_duplicate_keys_approximate(f.read())
    if not duplicates:
        return
    print('WARNING: Duplicate keys found in {}\n'
          'These will overwrite each other:'.format(file_path), file=output)
    for duplicate in duplicates:
        print('  "{}" on lines {} and {}'.format(*duplicate), file=output)
