'''A small dense tensor engine with reverse-mode automatic differentiation.

Operations are recorded on a Tape, an append-only list of nodes. A tape is
only active inside its `with` block, and the active tape lives in a context
variable, so every thread (and every asyncio task) records onto its own graph.
Outside of a tape nothing is recorded, which is how inference runs.

All data is float64, C-contiguous, and copied rather than viewed.
'''

import collections
import contextvars
import functools

import numpy as np
from scipy import special

from .error import GraphError, ShapeError

# Logits are clamped to this range before they reach exp/log in the losses.
LOGIT_CLAMP = 30.0

_active_tape = contextvars.ContextVar('queryseg_tape', default=None)

Node = collections.namedtuple('Node', ['output', 'inputs', 'backward'])


class Tensor:
    # ndarray op Tensor dispatches to the reflected Tensor method.
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64, order='C')
        self.grad = None
        self.requires_grad = requires_grad
        # Set on tensors produced by a recorded op. Leaves keep None.
        self._tape = None

    @classmethod
    def _wrap(cls, data, requires_grad=False):
        t = cls.__new__(cls)
        t.data = np.ascontiguousarray(data, dtype=np.float64)
        t.grad = None
        t.requires_grad = requires_grad
        t._tape = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.size != 1:
            raise ShapeError('item() needs a single element, got shape {}.',
                             self.shape)
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data.copy()

    def detach(self):
        return Tensor._wrap(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return 'Tensor(shape={}, requires_grad={})'.format(
            self.shape, self.requires_grad)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)


class Tape:
    '''Records operations in execution order. Recording order is a valid
    topological order, so backward() just walks the nodes in reverse, once.'''

    def __init__(self):
        self.nodes = []
        self.consumed = False
        self._tokens = []

    def __enter__(self):
        self._tokens.append(_active_tape.set(self))
        return self

    def __exit__(self, *args):
        _active_tape.reset(self._tokens.pop())

    def record(self, output, inputs, backward):
        if self.consumed:
            raise GraphError('This graph was already consumed by backward().')
        output._tape = self
        self.nodes.append(Node(output, tuple(inputs), backward))


def is_recording():
    return _active_tape.get() is not None


def as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _op(data, inputs, backward):
    '''Builds the output tensor of an op and records it when a tape is active
    and any input needs a gradient.'''
    tape = _active_tape.get()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, requires_grad=needs_grad)
    if needs_grad:
        tape.record(out, inputs, backward)
    return out


def backward(loss):
    '''Populates .grad on every leaf that requires a gradient and that the
    scalar `loss` depends on. Leaf gradients accumulate; the graph is
    consumed.'''
    if loss.size != 1 or loss.ndim > 1:
        raise GraphError(
            'backward() needs a scalar loss, got shape {}.', loss.shape)
    seed = np.ones_like(loss.data)
    if loss._tape is None:
        if not loss.requires_grad:
            raise GraphError('The loss does not depend on any tensor that '
                             'requires a gradient.')
        _accumulate_leaf(loss, seed)
        return
    tape = loss._tape
    if tape.consumed:
        raise GraphError('This graph was already consumed by backward().')
    grads = {id(loss): seed}
    leaves = {}
    for node in reversed(tape.nodes):
        grad_out = grads.pop(id(node.output), None)
        if grad_out is None:
            continue
        input_grads = node.backward(grad_out)
        for tensor, grad in zip(node.inputs, input_grads):
            if grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if tensor._tape is None:
                leaves[key] = tensor
            if key in grads:
                grads[key] = grads[key] + grad
            else:
                grads[key] = grad
    for key, leaf in leaves.items():
        _accumulate_leaf(leaf, grads[key])
    tape.nodes.clear()
    tape.consumed = True


def _accumulate_leaf(leaf, grad):
    grad = np.array(grad, dtype=np.float64).reshape(leaf.shape)
    leaf.grad = grad if leaf.grad is None else leaf.grad + grad


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# Elementwise arithmetic. Inputs broadcast the numpy way.

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return _op(a.data + b.data, (a, b), lambda g: (
        _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return _op(a.data - b.data, (a, b), lambda g: (
        _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return _op(a.data * b.data, (a, b), lambda g: (
        _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    out = a.data / b.data
    return _op(out, (a, b), lambda g: (
        _unbroadcast(g / b.data, a.shape),
        _unbroadcast(-g * out / b.data, b.shape)))


def neg(a):
    return _op(-a.data, (a, ), lambda g: (-g, ))


def power(a, exponent):
    exponent = float(exponent)
    out = a.data**exponent

    def grad_fn(g):
        if exponent == 0.0:
            return (np.zeros_like(g), )
        return (g * exponent * a.data**(exponent - 1.0), )

    return _op(out, (a, ), grad_fn)


def _check_broadcast(a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError('Cannot broadcast shapes {} and {}.', a.shape,
                         b.shape) from None


def broadcast_to(a, shape):
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError('Cannot broadcast shape {} to {}.', a.shape,
                         shape) from None
    return _op(out, (a, ), lambda g: (_unbroadcast(g, a.shape), ))


# Activations.

def relu(a):
    mask = a.data > 0
    return _op(a.data * mask, (a, ), lambda g: (g * mask, ))


def sigmoid(a):
    out = special.expit(a.data)
    return _op(out, (a, ), lambda g: (g * out * (1.0 - out), ))


def log_sigmoid(a):
    '''log(sigmoid(a)), evaluated without overflow for large |a|.'''
    out = -np.logaddexp(0.0, -a.data)
    return _op(out, (a, ), lambda g: (g * special.expit(-a.data), ))


def softmax(a, axis=-1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    exps = np.exp(shifted)
    out = exps / exps.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner), )

    return _op(out, (a, ), grad_fn)


def clamp(a, low, high):
    inside = (a.data >= low) & (a.data <= high)
    return _op(np.clip(a.data, low, high), (a, ), lambda g: (g * inside, ))


def clamp_logits(a):
    return clamp(a, -LOGIT_CLAMP, LOGIT_CLAMP)


# Reductions and layout.

def reduce_sum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(), )

    return _op(out, (a, ), grad_fn)


def reduce_mean(a, axis=None, keepdims=False):
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis, )
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return reduce_sum(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape):
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError('Cannot reshape {} into {}.', a.shape,
                         shape) from None
    return _op(out, (a, ), lambda g: (g.reshape(a.shape), ))


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _op(a.data.transpose(axes), (a, ),
               lambda g: (g.transpose(inverse), ))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError('Cannot concatenate shapes {} along axis {}.',
                         [t.shape for t in tensors], axis) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _op(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors, axis=0):
    expanded = []
    for t in tensors:
        shape = list(t.shape)
        shape.insert(axis if axis >= 0 else len(shape) + axis + 1, 1)
        expanded.append(reshape(t, shape))
    return concat(expanded, axis=axis)


def getitem(a, key):
    def grad_fn(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        return (full, )

    return _op(a.data[key], (a, ), grad_fn)


# Linear algebra and spatial ops.

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError('matmul shape mismatch: {} x {}.', a.shape, b.shape)
    return _op(a.data @ b.data, (a, b), lambda g: (g @ b.data.T,
                                                     a.data.T @ g))


def conv_output_extent(extent, size, stride, pad):
    '''Output extent of a strided cross-correlation. Like every mainstream
    framework we floor, so stride-2 3x3 convs halve even inputs.'''
    span = extent + 2 * pad - size
    if span < 0:
        raise ShapeError(
            'Kernel of size {} does not fit an input extent of {} with '
            'padding {}.', size, extent, pad)
    return span // stride + 1


def conv2d(x, w, stride=1, pad=0):
    '''Cross-correlation of x[C,H,W] with w[K,C,s,s].'''
    if x.ndim != 3 or w.ndim != 4 or w.shape[1] != x.shape[0] \
            or w.shape[2] != w.shape[3]:
        raise ShapeError('conv2d shape mismatch: input {}, kernel {}.',
                         x.shape, w.shape)
    channels, height, width = x.shape
    kernels, _, size, _ = w.shape
    out_h = conv_output_extent(height, size, stride, pad)
    out_w = conv_output_extent(width, size, stride, pad)
    padded = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(
        padded, (size, size), axis=(1, 2))
    windows = windows[:, ::stride, ::stride][:, :out_h, :out_w]
    cols = windows.transpose(0, 3, 4, 1, 2).reshape(
        channels * size * size, out_h * out_w)
    weights = w.data.reshape(kernels, -1)
    out = (weights @ cols).reshape(kernels, out_h, out_w)

    def grad_fn(g):
        g = g.reshape(kernels, -1)
        grad_w = (g @ cols.T).reshape(w.shape)
        grad_cols = (weights.T @ g).reshape(channels, size, size, out_h,
                                            out_w)
        grad_padded = np.zeros_like(padded)
        for i in range(size):
            for j in range(size):
                grad_padded[:, i:i + stride * out_h:stride,
                            j:j + stride * out_w:stride] += grad_cols[:, i, j]
        grad_x = grad_padded[:, pad:pad + height, pad:pad + width]
        return grad_x, grad_w

    return _op(out, (x, w), grad_fn)


def layer_norm(x, gamma, beta, eps=1e-5):
    '''Normalizes over the last axis, then applies the affine gamma/beta.'''
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + eps)
    normed = centered * inv_std
    out = normed * gamma.data + beta.data

    def grad_fn(g):
        grad_normed = g * gamma.data
        grad_x = inv_std * (
            grad_normed - grad_normed.mean(axis=-1, keepdims=True) -
            normed * (grad_normed * normed).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return grad_x, (g * normed).sum(axis=lead), g.sum(axis=lead)

    return _op(out, (x, gamma, beta), grad_fn)


@functools.lru_cache(maxsize=256)
def _resize_matrix(source, target):
    '''Row i holds the align-corners-false bilinear weights of output sample i
    over the source samples.'''
    scale = source / target
    positions = np.maximum((np.arange(target) + 0.5) * scale - 0.5, 0.0)
    low = np.minimum(np.floor(positions).astype(int), source - 1)
    high = np.minimum(low + 1, source - 1)
    frac = positions - low
    matrix = np.zeros((target, source))
    rows = np.arange(target)
    np.add.at(matrix, (rows, low), 1.0 - frac)
    np.add.at(matrix, (rows, high), frac)
    matrix.setflags(write=False)
    return matrix


def bilinear_resize(x, height, width):
    if height < 1 or width < 1:
        raise ShapeError('Resize target must be at least 1x1, got {}x{}.',
                         height, width)
    if x.ndim != 3:
        raise ShapeError('bilinear_resize expects [C,H,W], got {}.', x.shape)
    if x.shape[1:] == (height, width):
        return _op(x.data.copy(), (x, ), lambda g: (g, ))
    rows = _resize_matrix(x.shape[1], height)
    cols = _resize_matrix(x.shape[2], width)
    out = np.einsum('hH,cHW,wW->chw', rows, x.data, cols)
    return _op(out, (x, ), lambda g: (
        np.einsum('hH,chw,wW->cHW', rows, g, cols), ))


def zeros(shape, requires_grad=False):
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad=False):
    return Tensor(np.ones(shape), requires_grad=requires_grad)
