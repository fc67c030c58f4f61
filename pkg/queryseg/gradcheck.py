'''Finite-difference verification of every differentiable operation.

Cases register themselves with @gradcheck_case(name). A case takes a numpy
Generator and returns (f, inputs, max_entries): f maps the inputs to a scalar
Tensor, and up to max_entries elements of each input are checked (all of
them when max_entries is None).
'''

from collections import OrderedDict, namedtuple

import numpy as np

from . import config as cfg
from . import decoder
from . import losses
from . import nn
from . import tensor as T
from .error import PrintableError
from .model import Model

DEFAULT_STEP = 1e-6
DEFAULT_TOLERANCE = 1e-4
# Below this magnitude, errors are measured absolutely.
RELATIVE_FLOOR = 1e-4

CASES = OrderedDict()

GradCheckResult = namedtuple('GradCheckResult', ['name', 'error', 'passed'])


class GradCheckError(PrintableError):
    pass


def gradcheck_case(name, registry=None):
    registry = CASES if registry is None else registry

    def decorator(f):
        if name in registry:
            raise GradCheckError('Gradient check "{}" is registered twice.',
                                 name)
        registry[name] = f
        return f

    return decorator


def grad_check(f, x, h=DEFAULT_STEP, entries=None):
    '''Worst relative error between autodiff and central differences
    (f(x+h) - f(x-h)) / 2h over the given flat entries of x (default: all).
    f must read x by reference.'''
    x.zero_grad()
    with T.Tape():
        T.backward(f(x))
    if x.grad is None:
        analytic = np.zeros(x.size)
    else:
        analytic = x.grad.reshape(-1).copy()
    flat = x.data.reshape(-1)
    if entries is None:
        entries = range(flat.size)
    worst = 0.0
    for i in entries:
        original = flat[i]
        flat[i] = original + h
        plus = f(x).item()
        flat[i] = original - h
        minus = f(x).item()
        flat[i] = original
        numeric = (plus - minus) / (2 * h)
        scale = max(abs(analytic[i]), abs(numeric), RELATIVE_FLOOR)
        worst = max(worst, abs(analytic[i] - numeric) / scale)
    x.zero_grad()
    return worst


def check_case(name, case, seed=0, h=DEFAULT_STEP,
               tolerance=DEFAULT_TOLERANCE):
    rng = np.random.Generator(np.random.PCG64(seed))
    f, inputs, max_entries = case(rng)
    error = 0.0
    for x in inputs:
        entries = None
        if max_entries is not None and x.size > max_entries:
            entries = rng.choice(x.size, max_entries, replace=False)
        error = max(error, grad_check(lambda _: f(*inputs), x, h, entries))
    return GradCheckResult(name, error, bool(error < tolerance))


def run_gradcheck(seed=0, h=DEFAULT_STEP, tolerance=DEFAULT_TOLERANCE,
                  cases=None):
    cases = CASES if cases is None else cases
    return [
        check_case(name, case, seed, h, tolerance)
        for name, case in cases.items()
    ]


def format_results(results):
    width = max([len(r.name) for r in results] + [4])
    lines = [
        '{:<{}}  {:>10}  {}'.format(r.name, width, '{:.2e}'.format(r.error),
                                    'ok' if r.passed else 'FAILED')
        for r in results
    ]
    failed = [r.name for r in results if not r.passed]
    if failed:
        lines.append('{} of {} checks failed: {}'.format(
            len(failed), len(results), ', '.join(failed)))
    else:
        lines.append('all {} checks passed'.format(len(results)))
    return '\n'.join(lines) + '\n'


def _leaf(values):
    return T.Tensor(values, requires_grad=True)


def _weighted(rng, fn):
    '''Reduces fn's output to a scalar with fixed random weights, so every
    output element reaches the gradient.'''
    weights = {}

    def scalar(*args):
        out = fn(*args)
        if 'w' not in weights:
            weights['w'] = rng.normal(size=out.shape)
        return T.reduce_sum(out * weights['w'])

    return scalar


def _away_from_zero(rng, shape, low=0.1, high=1.5):
    return rng.uniform(low, high, size=shape) * rng.choice([-1, 1], shape)


@gradcheck_case('add')
def _add(rng):
    return _weighted(rng, T.add), [
        _leaf(rng.normal(size=(3, 4))), _leaf(rng.normal(size=(4, )))
    ], None


@gradcheck_case('sub')
def _sub(rng):
    return _weighted(rng, T.sub), [
        _leaf(rng.normal(size=(3, 1))), _leaf(rng.normal(size=(3, 4)))
    ], None


@gradcheck_case('mul')
def _mul(rng):
    return _weighted(rng, T.mul), [
        _leaf(rng.normal(size=(2, 3))), _leaf(rng.normal(size=(2, 3)))
    ], None


@gradcheck_case('div')
def _div(rng):
    return _weighted(rng, T.div), [
        _leaf(rng.normal(size=(2, 3))),
        _leaf(_away_from_zero(rng, (2, 3), 0.5, 2.0))
    ], None


@gradcheck_case('neg')
def _neg(rng):
    return _weighted(rng, T.neg), [_leaf(rng.normal(size=(4, )))], None


@gradcheck_case('power')
def _power(rng):
    return _weighted(rng, lambda a: T.power(a, 3)), [
        _leaf(rng.normal(size=(3, 3)))
    ], None


@gradcheck_case('broadcast_to')
def _broadcast_to(rng):
    return _weighted(rng, lambda a: T.broadcast_to(a, (2, 3, 4))), [
        _leaf(rng.normal(size=(3, 1)))
    ], None


@gradcheck_case('relu')
def _relu(rng):
    return _weighted(rng, T.relu), [_leaf(_away_from_zero(rng, (3, 4)))], None


@gradcheck_case('sigmoid')
def _sigmoid(rng):
    return _weighted(rng, T.sigmoid), [_leaf(rng.normal(size=(3, 4)) * 3)
                                       ], None


@gradcheck_case('log_sigmoid')
def _log_sigmoid(rng):
    return _weighted(rng, T.log_sigmoid), [
        _leaf(rng.normal(size=(3, 4)) * 3)
    ], None


@gradcheck_case('softmax')
def _softmax(rng):
    return _weighted(rng, lambda a: T.softmax(a, axis=0) + T.softmax(a)), [
        _leaf(rng.normal(size=(3, 4)))
    ], None


@gradcheck_case('clamp')
def _clamp(rng):
    values = _away_from_zero(rng, (4, 4), 0.1, 0.4)
    values[::2] = _away_from_zero(rng, (2, 4), 0.6, 1.5)
    return _weighted(rng, lambda a: T.clamp(a, -0.5, 0.5)), [_leaf(values)
                                                              ], None


@gradcheck_case('reduce_sum')
def _reduce_sum(rng):
    return _weighted(rng, lambda a: T.reduce_sum(a, axis=(0, 2),
                                                 keepdims=True)), [
        _leaf(rng.normal(size=(2, 3, 4)))
    ], None


@gradcheck_case('reduce_mean')
def _reduce_mean(rng):
    return _weighted(rng, lambda a: T.reduce_mean(a, axis=1)), [
        _leaf(rng.normal(size=(2, 3, 4)))
    ], None


@gradcheck_case('reshape')
def _reshape(rng):
    return _weighted(rng, lambda a: T.reshape(a, (4, 6))), [
        _leaf(rng.normal(size=(2, 3, 4)))
    ], None


@gradcheck_case('transpose')
def _transpose(rng):
    return _weighted(rng, lambda a: T.transpose(a, (1, 2, 0))), [
        _leaf(rng.normal(size=(2, 3, 4)))
    ], None


@gradcheck_case('concat')
def _concat(rng):
    return _weighted(rng, lambda a, b: T.concat([a, b, a], axis=1)), [
        _leaf(rng.normal(size=(2, 3))), _leaf(rng.normal(size=(2, 1)))
    ], None


@gradcheck_case('stack')
def _stack(rng):
    return _weighted(rng, lambda a, b: T.stack([a, b], axis=1)), [
        _leaf(rng.normal(size=(2, 3))), _leaf(rng.normal(size=(2, 3)))
    ], None


@gradcheck_case('getitem')
def _getitem(rng):
    index = np.array([0, 2, 2])
    return _weighted(rng, lambda a: a[index] + a[:, 1:3].sum()), [
        _leaf(rng.normal(size=(3, 4)))
    ], None


@gradcheck_case('matmul')
def _matmul(rng):
    return _weighted(rng, T.matmul), [
        _leaf(rng.normal(size=(3, 4))), _leaf(rng.normal(size=(4, 2)))
    ], None


@gradcheck_case('conv2d')
def _conv2d(rng):
    def f(x, w, k):
        strided = T.conv2d(x, w, stride=2, pad=1)
        pointwise = T.conv2d(x, k)
        return T.concat([T.reshape(strided, (-1, )),
                         T.reshape(pointwise, (-1, ))], axis=0)

    return _weighted(rng, f), [
        _leaf(rng.normal(size=(2, 6, 5))),
        _leaf(rng.normal(size=(3, 2, 3, 3))),
        _leaf(rng.normal(size=(2, 2, 1, 1)))
    ], None


@gradcheck_case('layer_norm')
def _layer_norm(rng):
    return _weighted(rng, T.layer_norm), [
        _leaf(rng.normal(size=(3, 5))),
        _leaf(rng.normal(size=(5, ))),
        _leaf(rng.normal(size=(5, )))
    ], None


@gradcheck_case('bilinear_resize')
def _bilinear_resize(rng):
    def f(x):
        up = T.bilinear_resize(x, 5, 7)
        down = T.bilinear_resize(x, 2, 2)
        return T.concat([T.reshape(up, (-1, )), T.reshape(down, (-1, ))],
                        axis=0)

    return _weighted(rng, f), [_leaf(rng.normal(size=(2, 3, 4)))], None


@gradcheck_case('focal_loss')
def _focal_loss(rng):
    targets = rng.integers(0, 2, size=(4, 5))
    return (lambda x: losses.focal_loss(x, targets),
            [_leaf(rng.normal(size=(4, 5)) * 2)], None)


@gradcheck_case('dice_loss')
def _dice_loss(rng):
    targets = rng.integers(0, 2, size=(2, 4, 4))
    return (lambda x: losses.dice_loss(x, targets),
            [_leaf(rng.normal(size=(2, 4, 4)) * 2)], None)


@gradcheck_case('attribute_bce')
def _attribute_bce(rng):
    targets = rng.integers(0, 2, size=(3, 6))
    return (lambda x: losses.attribute_bce(x, targets),
            [_leaf(rng.normal(size=(3, 6)) * 2)], None)


@gradcheck_case('group_object_features')
def _group_object_features(rng):
    return _weighted(rng, decoder.group_object_features), [
        _leaf(rng.normal(size=(3, 4, 4))),
        _leaf(rng.normal(size=(5, 4, 4)))
    ], None


def _tiny_model_config(**overrides):
    model = cfg.ModelConfig(
        queries=2, dim=8, stages=3, heads=2, ffn_dim=16,
        query_mode='decoupled', mlr_levels=4, dynamic_conv=True,
        residual_query=True, multi_layer_render=True, clamp=T.LOGIT_CLAMP,
        num_classes=3, num_attributes=4)
    return model._replace(**overrides)


@gradcheck_case('multi_layer_render')
def _multi_layer_render(rng):
    store = nn.ParamStore(int(rng.integers(1 << 16)))
    render = decoder.MultiLayerRender(store, 'mlr', 4, 4, T.LOGIT_CLAMP)
    levels = [T.Tensor(rng.normal(size=(4, 8 >> i, 8 >> i)))
              for i in range(4)]
    return (_weighted(rng, lambda m, fc: render(m, levels)),
            [_leaf(rng.normal(size=(2, 8, 8))), store['mlr.fc.weight']], None)


@gradcheck_case('dynamic_conv')
def _dynamic_conv(rng):
    store = nn.ParamStore(int(rng.integers(1 << 16)))
    update = decoder.DynamicConv(store, 'dc', 6)
    return (_weighted(rng, lambda x, q, w: update(x, q)), [
        _leaf(rng.normal(size=(3, 6))),
        _leaf(rng.normal(size=(3, 6))), store['dc.params.weight']
    ], None)


@gradcheck_case('query_self_update')
def _query_self_update(rng):
    store = nn.ParamStore(int(rng.integers(1 << 16)))
    block = decoder.QuerySelfUpdate(store, 'self', 8, 2, 16)
    return (_weighted(rng, lambda q, w: block(q)), [
        _leaf(rng.normal(size=(3, 8))), store['self.attn.query.weight']
    ], None)


def two_instance_targets(rng, extent=8, num_attributes=4):
    '''Two ground truths on an extent x extent mask grid: a top-left and a
    bottom-right block.'''
    masks = np.zeros((2, extent, extent), dtype=bool)
    half = extent // 2
    masks[0, :half, :half] = True
    masks[1, half - 1:, half:] = True
    attributes = rng.integers(0, 2, size=(2, num_attributes)).astype(float)
    return losses.Targets(masks, np.array([0, 2]), attributes)


@gradcheck_case('model_loss')
def _model_loss(rng):
    '''The full three-stage loss of a two-query model on two ground
    truths, checked at two entries of every parameter.'''
    model = Model(_tiny_model_config(), seed=int(rng.integers(1 << 16)))
    image = T.Tensor(rng.uniform(size=(3, 32, 32)))
    targets = two_instance_targets(rng)
    loss_cfg = cfg.LossConfig(1.0, 1.0, 1.0, 0.25, 2.0, 1.0)
    params = [param for _, param in model.store.items()]
    # Zero biases put ReLU inputs exactly on the kink wherever the input is
    # zero, and central differences see half a slope there.
    for name, param in model.store.items():
        if name.endswith('.bias'):
            param.data += rng.uniform(0.05, 0.1, size=param.shape)

    def f(*_):
        return losses.total_loss(model(image), targets, loss_cfg).total

    return f, params, 2
