import numpy as np
from PIL import Image

from . import nn
from . import tensor as T
from .decoder import Decoder
from .encoder import Encoder, pad_image, padded_extent
from .error import PrintableError

# Name fragments of the parameters owned by each stream.
OBJECT_STREAM = ('encoder.mask_init.', '.obj_dc.', '.obj_self.',
                 '.heads.mask.', '.heads.cls.')
ATTRIBUTE_STREAM = ('encoder.attribute_queries', '.atr_dc.', '.atr_self.',
                    '.atr_mlp.', '.mlr.', '.heads.atr.')


class ModelError(PrintableError):
    pass


class Model:
    '''Encoder and decoder over one ParamStore.'''

    def __init__(self, model_cfg, seed=0):
        if model_cfg.num_classes < 1 or model_cfg.num_attributes < 1:
            raise ModelError(
                'The model needs at least one category and one attribute, '
                'got {} and {}.', model_cfg.num_classes,
                model_cfg.num_attributes)
        self.cfg = model_cfg
        self.store = nn.ParamStore(seed)
        self.encoder = Encoder(self.store, model_cfg)
        self.decoder = Decoder(self.store, model_cfg)

    def __call__(self, image):
        '''image: a padded Tensor[3,H,W], or a [3,H,W] array that gets
        padded here. Returns one StagePrediction per stage.'''
        if not isinstance(image, T.Tensor):
            image = T.Tensor(pad_image(image))
        return self.decoder(self.encoder(image))

    def stream_parameter_names(self, stream):
        fragments = {
            'object': OBJECT_STREAM,
            'attribute': ATTRIBUTE_STREAM
        }[stream]
        return [
            name for name in self.store
            if any(fragment in name for fragment in fragments)
        ]


def input_extent(height, width, image_size):
    '''Network input extent: the longer side scaled to image_size.'''
    scale = image_size / max(height, width)
    return (max(1, int(round(height * scale))),
            max(1, int(round(width * scale))))


def resize_pixels(pixels, height, width):
    '''Bilinear resize of a float [3,H,W] image in [0,1].'''
    if pixels.shape[1:] == (height, width):
        return pixels
    channels = [
        np.asarray(
            Image.fromarray(channel.astype(np.float32), 'F').resize(
                (width, height), Image.BILINEAR))
        for channel in pixels
    ]
    return np.stack(channels).astype(np.float64)


def resize_mask(mask, height, width):
    '''Nearest-neighbour resize of a bool mask.'''
    if mask.shape == (height, width):
        return mask
    image = Image.fromarray(mask.astype(np.uint8) * 255, 'L')
    return np.asarray(image.resize((width, height), Image.NEAREST)) > 0


def prepare_image(pixels, image_size):
    '''Scales and pads a [3,H,W] image for the network. Returns the input
    Tensor and the scaled (height, width) before padding. The short side
    may scale below 32; padding brings it back up.'''
    height, width = input_extent(pixels.shape[1], pixels.shape[2],
                                 image_size)
    padded = np.zeros((3, padded_extent(height), padded_extent(width)))
    padded[:, :height, :width] = resize_pixels(pixels, height, width)
    return T.Tensor(padded), (height, width)
