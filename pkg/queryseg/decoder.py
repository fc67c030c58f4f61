'''The cascaded two-stream decoder.

Every stage refines the object queries from features grouped under the
previous masks, then refines the attribute queries from multi-level features
grouped under the same masks, and finally predicts masks, classes and
attributes. Stages do not share weights.
'''

from collections import namedtuple

import numpy as np

from . import nn
from . import tensor as T
from .encoder import query_state
from .error import ShapeError

# Initial class probability of every query.
CLASS_PRIOR = 0.01

StagePrediction = namedtuple(
    'StagePrediction',
    ['mask_logits', 'class_logits', 'attr_logits', 'queries_out'])


def group_object_features(mask_logits, features, clamp=T.LOGIT_CLAMP):
    '''Pools features[d,H,W] under each soft mask. Unnormalized sums.'''
    mask_logits, features = T.as_tensor(mask_logits), T.as_tensor(features)
    if mask_logits.ndim != 3 or features.ndim != 3 or \
            mask_logits.shape[1:] != features.shape[1:]:
        raise ShapeError('Masks {} and features {} are not spatially '
                         'aligned.', mask_logits.shape, features.shape)
    count, height, width = mask_logits.shape
    dim = features.shape[0]
    probs = T.sigmoid(T.clamp(mask_logits, -clamp, clamp))
    probs = T.reshape(probs, (count, height * width))
    flat = T.reshape(features, (dim, height * width))
    return T.matmul(probs, T.transpose(flat))


def residual_attribute_query(atr, obj):
    if atr.shape != obj.shape:
        raise ShapeError('Attribute queries {} and object queries {} must '
                         'have the same shape.', atr.shape, obj.shape)
    return atr + obj


class MultiLayerRender:
    '''Groups every pyramid level under the resized masks and fuses the
    concatenation with FC + LayerNorm + ReLU.'''

    def __init__(self, store, name, dim, num_levels, clamp):
        self.num_levels = num_levels
        self.clamp = clamp
        self.fc = nn.Linear(store, name + '.fc', num_levels * dim, dim)
        self.norm = nn.LayerNorm(store, name + '.norm', dim)

    def __call__(self, mask_logits, levels):
        if len(levels) < self.num_levels:
            raise ShapeError('Multi-layer rendering needs {} levels, got {}.',
                             self.num_levels, len(levels))
        grouped = []
        for level in levels[:self.num_levels]:
            _, height, width = level.shape
            resized = T.bilinear_resize(mask_logits, height, width)
            grouped.append(group_object_features(resized, level, self.clamp))
        return T.relu(self.norm(self.fc(T.concat(grouped, axis=1))))


class _Gate:
    def __init__(self, store, name, dim):
        self.fc = nn.Linear(store, name + '.fc', dim, dim)
        self.norm = nn.LayerNorm(store, name + '.norm', dim)

    def __call__(self, x):
        return T.sigmoid(self.norm(self.fc(x)))


class DynamicConv:
    '''Re-weights the queries with parameters generated from the grouped
    features, then mixes features and queries through two learned gates.'''

    def __init__(self, store, name, dim, enabled=True):
        self.enabled = enabled
        if enabled:
            self.params = nn.Linear(store, name + '.params', dim, dim)
            self.gate_x = _Gate(store, name + '.gate_x', dim)
            self.gate_q = _Gate(store, name + '.gate_q', dim)

    def __call__(self, features, queries):
        if not self.enabled:
            return features + queries
        reweighted = queries * self.params(features)
        return (self.gate_x(features) * features +
                self.gate_q(features) * reweighted)


class QuerySelfUpdate:
    '''Multi-head self-attention across the queries and an FFN, each with a
    residual add followed by LayerNorm.'''

    def __init__(self, store, name, dim, heads, ffn_dim):
        if dim % heads != 0:
            raise ShapeError('Query width {} is not divisible by {} heads.',
                             dim, heads)
        self.heads = heads
        self.head_dim = dim // heads
        self.query = nn.Linear(store, name + '.attn.query', dim, dim)
        self.key = nn.Linear(store, name + '.attn.key', dim, dim)
        self.value = nn.Linear(store, name + '.attn.value', dim, dim)
        self.out = nn.Linear(store, name + '.attn.out', dim, dim)
        self.attn_norm = nn.LayerNorm(store, name + '.attn_norm', dim)
        self.ffn = nn.FeedForward(store, name + '.ffn', dim, ffn_dim, dim)
        self.ffn_norm = nn.LayerNorm(store, name + '.ffn_norm', dim)

    def attention(self, x):
        queries, keys, values = self.query(x), self.key(x), self.value(x)
        scale = 1.0 / np.sqrt(self.head_dim)
        heads = []
        for h in range(self.heads):
            columns = (slice(None),
                       slice(h * self.head_dim, (h + 1) * self.head_dim))
            scores = T.matmul(queries[columns],
                              T.transpose(keys[columns])) * scale
            heads.append(T.matmul(T.softmax(scores, axis=-1), values[columns]))
        return self.out(T.concat(heads, axis=1))

    def __call__(self, x):
        x = self.attn_norm(x + self.attention(x))
        return self.ffn_norm(x + self.ffn(x))


class PredictionHeads:
    def __init__(self, store, name, dim, num_classes, num_attributes):
        self.mask = nn.FeedForward(store, name + '.mask', dim, dim, dim)
        self.cls = nn.FeedForward(store, name + '.cls', dim, dim, num_classes)
        self.cls.second.bias.data[:] = -np.log(
            (1 - CLASS_PRIOR) / CLASS_PRIOR)
        self.atr = nn.FeedForward(store, name + '.atr', dim, dim,
                                  num_attributes)

    def __call__(self, obj, atr, fused):
        dim, height, width = fused.shape
        kernels = self.mask(obj)
        masks = T.matmul(kernels, T.reshape(fused, (dim, height * width)))
        masks = T.reshape(masks, (obj.shape[0], height, width))
        return StagePrediction(masks, self.cls(obj), self.atr(atr),
                               query_state(obj, atr))


class DecoderStage:
    def __init__(self, store, name, model_cfg):
        dim = model_cfg.dim
        self.cfg = model_cfg
        self.obj_update = DynamicConv(store, name + '.obj_dc', dim,
                                      model_cfg.dynamic_conv)
        self.obj_self = QuerySelfUpdate(store, name + '.obj_self', dim,
                                        model_cfg.heads, model_cfg.ffn_dim)
        if model_cfg.query_mode == 'shared':
            self.atr_from_obj = nn.FeedForward(store, name + '.atr_mlp', dim,
                                               dim, dim)
            self.atr_update = self.obj_update
            self.atr_self = self.obj_self
        else:
            self.atr_from_obj = None
            self.atr_update = DynamicConv(store, name + '.atr_dc', dim,
                                          model_cfg.dynamic_conv)
            self.atr_self = QuerySelfUpdate(store, name + '.atr_self', dim,
                                            model_cfg.heads,
                                            model_cfg.ffn_dim)
        self.render = None
        if model_cfg.multi_layer_render:
            self.render = MultiLayerRender(store, name + '.mlr', dim,
                                           model_cfg.mlr_levels,
                                           model_cfg.clamp)
        self.heads = PredictionHeads(store, name + '.heads', dim,
                                     model_cfg.num_classes,
                                     model_cfg.num_attributes)

    def __call__(self, queries, mask_logits, pyramid):
        clamp = self.cfg.clamp
        # Object stream.
        obj_features = group_object_features(mask_logits, pyramid.fused,
                                             clamp)
        obj = self.obj_self(self.obj_update(obj_features, queries.obj))

        # Attribute stream, fed by this stage's refined object queries.
        if self.atr_from_obj is not None:
            atr = self.atr_from_obj(obj)
        elif self.cfg.residual_query:
            atr = residual_attribute_query(queries.atr, obj)
        else:
            atr = queries.atr
        if self.render is not None:
            atr_features = self.render(mask_logits, pyramid.levels)
        else:
            atr_features = group_object_features(mask_logits, pyramid.fused,
                                                 clamp)
        atr = self.atr_self(self.atr_update(atr_features, atr))

        return self.heads(obj, atr, pyramid.fused)


class Decoder:
    def __init__(self, store, model_cfg):
        self.stages = [
            DecoderStage(store, 'decoder.stage{}'.format(j + 1), model_cfg)
            for j in range(model_cfg.stages)
        ]

    def __call__(self, encoded):
        '''Returns one StagePrediction per stage. Stage j reads the masks of
        stage j-1; the first stage reads the initial masks.'''
        predictions = []
        queries, masks = encoded.queries, encoded.masks
        for stage in self.stages:
            prediction = stage(queries, masks, encoded.pyramid)
            predictions.append(prediction)
            queries, masks = prediction.queries_out, prediction.mask_logits
        return predictions
