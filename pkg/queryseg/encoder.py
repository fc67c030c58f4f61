'''The image encoder: a plain strided conv backbone, an FPN neck, the fused
stride-4 map with positional encodings, and the initial queries and masks.'''

from collections import namedtuple
import functools

import numpy as np

from . import nn
from . import tensor as T
from .error import ShapeError

STRIDES = (4, 8, 16, 32)
# Inputs are padded up to a multiple of the coarsest stride.
INPUT_MULTIPLE = STRIDES[-1]

FeaturePyramid = namedtuple('FeaturePyramid', ['levels', 'fused'])
QueryState = namedtuple('QueryState', ['obj', 'atr'])
EncoderOutput = namedtuple('EncoderOutput', ['pyramid', 'queries', 'masks'])


def query_state(obj, atr):
    if obj.shape != atr.shape:
        raise ShapeError('Object queries {} and attribute queries {} must '
                         'have the same shape.', obj.shape, atr.shape)
    return QueryState(obj, atr)


def stage_widths(dim):
    '''Widths double per stage and end at dim.'''
    return tuple(max(1, dim // 2**(3 - i)) for i in range(4))


def padded_extent(extent):
    return -(-extent // INPUT_MULTIPLE) * INPUT_MULTIPLE


def pad_image(image):
    '''Zero-pads the bottom and right of an image array [3,H,W] up to a
    multiple of 32.'''
    image = np.asarray(image, dtype=np.float64)
    _, height, width = image.shape
    if height < INPUT_MULTIPLE or width < INPUT_MULTIPLE:
        raise ShapeError('Images must be at least {0}x{0}, got {1}x{2}.',
                         INPUT_MULTIPLE, height, width)
    return np.pad(image, ((0, 0), (0, padded_extent(height) - height),
                          (0, padded_extent(width) - width)))


@functools.lru_cache(maxsize=32)
def positional_encoding(dim, height, width, temperature=10000.0):
    '''Fixed 2-D sine-cosine encoding [dim,H,W] of 1-based pixel positions.
    The first half of the channels encode rows, the rest encode columns;
    frequencies fall geometrically from one radian per pixel.'''

    def encode(extent, channels):
        positions = np.arange(1, extent + 1, dtype=np.float64)
        exponents = 2 * (np.arange(channels) // 2) / max(channels, 1)
        angles = positions[:, None] / temperature**exponents[None, :]
        return np.where(np.arange(channels) % 2 == 0, np.sin(angles),
                        np.cos(angles)).T

    row_channels = dim // 2
    encoding = np.empty((dim, height, width))
    encoding[:row_channels] = encode(height, row_channels)[:, :, None]
    encoding[row_channels:] = encode(width, dim - row_channels)[:, None, :]
    encoding.setflags(write=False)
    return encoding


class Encoder:
    def __init__(self, store, model_cfg):
        self.dim = model_cfg.dim
        self.queries = model_cfg.queries
        widths = stage_widths(self.dim)
        self.stem = [
            nn.Conv(store, 'encoder.stem1', 3, widths[0], 3, stride=2),
            nn.Conv(store, 'encoder.stem2', widths[0], widths[0], 3,
                    stride=2),
        ]
        self.stages = []
        in_channels = widths[0]
        for i, width in enumerate(widths):
            prefix = 'encoder.stage{}'.format(i + 1)
            self.stages.append([
                nn.Conv(store, prefix + '.conv1', in_channels, width, 3,
                        stride=1 if i == 0 else 2),
                nn.Conv(store, prefix + '.conv2', width, width, 3),
            ])
            in_channels = width
        self.laterals = [
            nn.Conv(store, 'neck.lateral{}'.format(i + 1), width, self.dim, 1)
            for i, width in enumerate(widths)
        ]
        self.smooths = [
            nn.Conv(store, 'neck.smooth{}'.format(i + 1), self.dim, self.dim,
                    3) for i in range(len(widths))
        ]
        self.mask_init = nn.Conv(store, 'encoder.mask_init', self.dim,
                                 self.queries, 1)
        # The shared-query mode derives attribute queries from the object
        # queries instead of learning them.
        self.attribute_queries = None
        if model_cfg.query_mode == 'decoupled':
            self.attribute_queries = store.add(
                'encoder.attribute_queries', (self.queries, self.dim),
                'normal', scale=1.0 / np.sqrt(self.dim))

    def __call__(self, image):
        raw = self.backbone_forward(image)
        levels = self.fpn_fuse(raw)
        pyramid = FeaturePyramid(levels, self.build_fused(levels))
        queries, masks = self.init_queries(pyramid.fused)
        return EncoderOutput(pyramid, queries, masks)

    def backbone_forward(self, image):
        '''image: Tensor[3,H,W] with H and W multiples of 32. Returns the raw
        maps at strides 4, 8, 16 and 32.'''
        if image.ndim != 3 or image.shape[0] != 3:
            raise ShapeError('Expected an RGB image [3,H,W], got {}.',
                             image.shape)
        _, height, width = image.shape
        if height < INPUT_MULTIPLE or width < INPUT_MULTIPLE:
            raise ShapeError('Images must be at least {0}x{0}, got {1}x{2}.',
                             INPUT_MULTIPLE, height, width)
        if height % INPUT_MULTIPLE or width % INPUT_MULTIPLE:
            raise ShapeError('Image extents must be multiples of {}, got '
                             '{}x{}. Use pad_image() first.', INPUT_MULTIPLE,
                             height, width)
        x = image
        for conv in self.stem:
            x = T.relu(conv(x))
        raw = []
        for stage in self.stages:
            for conv in stage:
                x = T.relu(conv(x))
            raw.append(x)
        return raw

    def fpn_fuse(self, raw):
        laterals = [lateral(x) for lateral, x in zip(self.laterals, raw)]
        merged = [None] * len(laterals)
        merged[-1] = laterals[-1]
        for i in reversed(range(len(laterals) - 1)):
            _, height, width = laterals[i].shape
            merged[i] = laterals[i] + T.bilinear_resize(
                merged[i + 1], height, width)
        return [smooth(x) for smooth, x in zip(self.smooths, merged)]

    def build_fused(self, levels):
        _, height, width = levels[0].shape
        fused = levels[0]
        for level in levels[1:]:
            fused = fused + T.bilinear_resize(level, height, width)
        return fused + positional_encoding(self.dim, height, width)

    def init_queries(self, fused):
        '''The initial masks come from a 1x1 conv over the fused map, and each
        object query starts out as that conv's kernel for its mask.'''
        masks = self.mask_init(fused)
        obj = T.reshape(self.mask_init.weight, (self.queries, self.dim))
        if self.attribute_queries is not None:
            atr = self.attribute_queries
        else:
            atr = obj
        return query_state(obj, atr), masks
