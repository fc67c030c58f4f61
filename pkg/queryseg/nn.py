import collections
import zlib

import numpy as np

from . import tensor as T
from .error import PrintableError


class ParameterError(PrintableError):
    pass


def parameter_rng(seed, name):
    '''Every parameter draws from its own stream, split off the run seed by
    the parameter's name. Adding a parameter never shifts the others.'''
    sequence = np.random.SeedSequence(
        entropy=seed, spawn_key=(zlib.crc32(name.encode('utf8')), ))
    return np.random.Generator(np.random.PCG64(sequence))


def xavier_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def he_uniform(rng, shape, fan_in):
    '''Keeps activation variance steady through ReLU layers.'''
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class ParamStore:
    '''The named parameters of a model, in registration order.'''

    def __init__(self, seed=0):
        self.seed = seed
        self._params = collections.OrderedDict()

    def add(self, name, shape, init='zeros', fan=None, scale=1.0):
        if name in self._params:
            raise ParameterError('Parameter "{}" already exists.', name)
        shape = tuple(shape)
        rng = parameter_rng(self.seed, name)
        if init == 'zeros':
            data = np.zeros(shape)
        elif init == 'ones':
            data = np.ones(shape)
        elif init == 'xavier':
            fan_in, fan_out = fan
            data = xavier_uniform(rng, shape, fan_in, fan_out)
        elif init == 'he':
            data = he_uniform(rng, shape, fan[0])
        elif init == 'normal':
            data = rng.standard_normal(shape) * scale
        else:
            raise ParameterError('Unknown initializer "{}".', init)
        param = T.Tensor(data, requires_grad=True)
        self._params[name] = param
        return param

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self, prefix=''):
        return [name for name in self._params if name.startswith(prefix)]

    def zero_grad(self):
        for param in self._params.values():
            param.zero_grad()

    def state(self):
        return collections.OrderedDict(
            (name, param.data.copy()) for name, param in self._params.items())

    def load_state(self, state):
        missing = set(self._params) - set(state)
        unexpected = set(state) - set(self._params)
        if missing or unexpected:
            raise ParameterError(
                'Parameter names do not match.\nmissing: {}\nunexpected: {}',
                ', '.join(sorted(missing)) or '-',
                ', '.join(sorted(unexpected)) or '-')
        for name, param in self._params.items():
            values = np.asarray(state[name], dtype=np.float64)
            if values.shape != param.shape:
                raise ParameterError(
                    'Parameter "{}" has shape {}, but the stored values have '
                    'shape {}.', name, param.shape, values.shape)
            param.data = values.copy()


class Linear:
    def __init__(self, store, name, in_dim, out_dim):
        self.weight = store.add(name + '.weight', (in_dim, out_dim), 'xavier',
                                fan=(in_dim, out_dim))
        self.bias = store.add(name + '.bias', (out_dim, ))

    def __call__(self, x):
        return T.matmul(x, self.weight) + self.bias


class LayerNorm:
    def __init__(self, store, name, dim, eps=1e-5):
        self.gamma = store.add(name + '.gamma', (dim, ), 'ones')
        self.beta = store.add(name + '.beta', (dim, ))
        self.eps = eps

    def __call__(self, x):
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class Conv:
    def __init__(self, store, name, in_channels, out_channels, size,
                 stride=1, bias=True):
        fan_in = in_channels * size * size
        fan_out = out_channels * size * size
        self.weight = store.add(name + '.weight',
                                (out_channels, in_channels, size, size),
                                'he', fan=(fan_in, fan_out))
        self.bias = store.add(name + '.bias',
                              (out_channels, )) if bias else None
        self.stride = stride
        self.pad = size // 2

    def __call__(self, x):
        out = T.conv2d(x, self.weight, self.stride, self.pad)
        if self.bias is not None:
            out = out + T.reshape(self.bias, (-1, 1, 1))
        return out


class FeedForward:
    '''FC -> ReLU -> FC.'''

    def __init__(self, store, name, in_dim, hidden_dim, out_dim):
        self.first = Linear(store, name + '.fc1', in_dim, hidden_dim)
        self.second = Linear(store, name + '.fc2', hidden_dim, out_dim)

    def __call__(self, x):
        return self.second(T.relu(self.first(x)))
