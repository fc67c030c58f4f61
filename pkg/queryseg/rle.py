'''COCO-compatible uncompressed run-length encoding of binary masks.

Counts alternate between runs of zeros and runs of ones over the pixels in
column-major order, always starting with a (possibly empty) run of zeros.
'''

import numpy as np

from .error import PrintableError


class RLEError(PrintableError):
    pass


def rle_encode(mask):
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise RLEError('Masks must be 2-D, got shape {}.', mask.shape)
    height, width = mask.shape
    pixels = mask.astype(bool).ravel(order='F')
    if pixels.size == 0:
        return {'size': [height, width], 'counts': []}
    changes = np.flatnonzero(pixels[1:] != pixels[:-1]) + 1
    boundaries = np.concatenate(([0], changes, [pixels.size]))
    counts = np.diff(boundaries).tolist()
    if pixels[0]:
        counts.insert(0, 0)
    return {'size': [height, width], 'counts': counts}


def rle_decode(rle, height=None, width=None):
    '''Decodes to a bool [H,W] array. H and W default to the RLE's own
    size and must agree with it when given.'''
    try:
        size = [int(v) for v in rle['size']]
        counts = [int(c) for c in rle['counts']]
    except (KeyError, TypeError, ValueError) as e:
        raise RLEError('Malformed RLE: {}', e) from e
    if len(size) != 2:
        raise RLEError('RLE size must be [height, width], got {}.', size)
    if height is None:
        height = size[0]
    if width is None:
        width = size[1]
    if [height, width] != size:
        raise RLEError('RLE is {}x{}, expected {}x{}.', size[0], size[1],
                       height, width)
    if any(c < 0 for c in counts):
        raise RLEError('RLE counts must not be negative.')
    if sum(counts) != height * width:
        raise RLEError('RLE counts sum to {}, expected {}x{} = {}.',
                       sum(counts), height, width, height * width)
    values = np.arange(len(counts)) % 2 == 1
    pixels = np.repeat(values, counts)
    return pixels.reshape((height, width), order='F')


def rle_area(rle):
    return int(sum(rle['counts'][1::2]))
