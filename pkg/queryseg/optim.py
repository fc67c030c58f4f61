import collections
import math

import numpy as np

from .error import PrintableError


class OptimizerError(PrintableError):
    pass


def learning_rate(optim_cfg, step):
    '''Linear warmup over the first warmup fraction of the steps, then cosine
    decay to zero.'''
    total = max(1, optim_cfg.steps)
    warmup_steps = int(math.ceil(optim_cfg.warmup * total))
    if step < warmup_steps:
        return optim_cfg.lr * (step + 1) / warmup_steps
    progress = (step - warmup_steps) / max(1, total - warmup_steps)
    return optim_cfg.lr * 0.5 * (1 + math.cos(math.pi * min(1.0, progress)))


def decays(param):
    '''Only weight matrices and kernels decay; biases and norms do not.'''
    return param.ndim >= 2


class AdamW:
    '''Adam with decoupled weight decay.'''

    def __init__(self, store, optim_cfg):
        self.store = store
        self.cfg = optim_cfg
        self.step_count = 0
        self.m = collections.OrderedDict(
            (name, np.zeros(param.shape)) for name, param in store.items())
        self.v = collections.OrderedDict(
            (name, np.zeros(param.shape)) for name, param in store.items())

    def step(self):
        lr = learning_rate(self.cfg, self.step_count)
        self.step_count += 1
        beta1, beta2 = self.cfg.betas
        m_correction = 1 - beta1**self.step_count
        v_correction = 1 - beta2**self.step_count
        for name, param in self.store.items():
            grad = param.grad
            if grad is None:
                grad = np.zeros(param.shape)
            self.m[name] = beta1 * self.m[name] + (1 - beta1) * grad
            self.v[name] = beta2 * self.v[name] + (1 - beta2) * grad * grad
            update = (self.m[name] / m_correction) / (
                np.sqrt(self.v[name] / v_correction) + self.cfg.eps)
            if decays(param):
                update = update + self.cfg.weight_decay * param.data
            param.data = param.data - lr * update
        return lr

    def state(self):
        state = collections.OrderedDict()
        for name in self.m:
            state['m.' + name] = self.m[name].copy()
            state['v.' + name] = self.v[name].copy()
        return state

    def load_state(self, state, step_count):
        expected = set(self.state())
        if set(state) != expected:
            raise OptimizerError(
                'Optimizer state does not match the model parameters.')
        for key, value in state.items():
            moments = self.m if key.startswith('m.') else self.v
            name = key[2:]
            if value.shape != moments[name].shape:
                raise OptimizerError(
                    'Optimizer state "{}" has shape {}, expected {}.', key,
                    value.shape, moments[name].shape)
            moments[name] = np.array(value, dtype=np.float64)
        self.step_count = step_count
