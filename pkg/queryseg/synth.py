'''Synthetic shapes with learnable attributes.

Every attribute is visible in the pixels: "striped" shapes are drawn with
diagonal stripes, "large" shapes keep a visible area above the size threshold
and "small" ones stay below it, and "warm"/"cool" pick the fill colour from
disjoint palettes. Later shapes are drawn on top of earlier ones and the
earlier masks are clipped to what stays visible.
'''

from collections import namedtuple
import os

import numpy as np
from PIL import Image, ImageDraw
import yaml

from . import compat
from .dataset import (Dataset, ImageRecord, InstanceAnnotation, Vocabulary,
                      save_annotations, save_image)
from .error import PrintableError
from .rle import rle_encode

DEFAULT_VOCABULARY = Vocabulary(
    categories=('circle', 'rect', 'triangle'),
    supercategories=('round', 'polygon', 'polygon'),
    attributes=('striped', 'solid', 'large', 'small', 'warm', 'cool'),
    attribute_groups=('texture', 'texture', 'size', 'size', 'hue', 'hue'),
    applicability=((0, 1, 2, 3, 4, 5), (0, 1, 2, 3, 4, 5), (0, 1, 4, 5)))

WARM_COLORS = ((214, 48, 49), (230, 126, 34), (241, 196, 15))
COOL_COLORS = ((41, 128, 185), (39, 174, 96), (142, 68, 173))
BACKGROUND = 235

ANNOTATIONS_FILE_NAME = 'annotations.json'
MAX_PLACEMENT_TRIES = 30

SynthConfig = namedtuple('SynthConfig', [
    'num_images', 'image_size', 'min_shapes', 'max_shapes', 'seed',
    'vocabulary', 'large_fraction', 'stripe_width'
])


class SynthError(PrintableError):
    pass


def synth_config(num_images=8, image_size=128, min_shapes=1, max_shapes=3,
                 seed=0, vocabulary=DEFAULT_VOCABULARY, large_fraction=0.04,
                 stripe_width=4):
    '''large_fraction is the area threshold between "small" and "large",
    as a fraction of the image area.'''
    cfg = SynthConfig(num_images, image_size, min_shapes, max_shapes, seed,
                      vocabulary, large_fraction, stripe_width)
    check_synth_config(cfg)
    return cfg


def check_synth_config(cfg):
    if cfg.num_images < 0:
        raise SynthError('Image count must not be negative.')
    if cfg.image_size < 32:
        raise SynthError('Images must be at least 32 pixels, got {}.',
                         cfg.image_size)
    if not 0 <= cfg.min_shapes <= cfg.max_shapes:
        raise SynthError('Need 0 <= min_shapes <= max_shapes, got {} and {}.',
                         cfg.min_shapes, cfg.max_shapes)
    vocab = cfg.vocabulary
    if len(vocab.attributes) < 2:
        raise SynthError('The attribute vocabulary needs at least 2 '
                         'attributes.')
    for name, applicable in zip(vocab.categories, vocab.applicability):
        if not applicable:
            raise SynthError('Category "{}" has no applicable attributes.',
                             name)


def _attribute_groups(vocab, category):
    '''Applicable attribute ids of a category, grouped by attribute group in
    vocabulary order.'''
    groups = {}
    for attribute in vocab.applicability[category]:
        groups.setdefault(vocab.attribute_groups[attribute],
                          []).append(attribute)
    return list(groups.values())


def _draw_shape(kind, size, extent, x, y):
    canvas = Image.new('L', (size, size), 0)
    draw = ImageDraw.Draw(canvas)
    box = [x, y, x + extent - 1, y + extent - 1]
    if kind == 'circle':
        draw.ellipse(box, fill=255)
    elif kind == 'rect':
        draw.rectangle(box, fill=255)
    elif kind == 'triangle':
        draw.polygon([(x + extent / 2, y), (x, y + extent - 1),
                      (x + extent - 1, y + extent - 1)], fill=255)
    else:
        raise SynthError('No drawing rule for category "{}".', kind)
    return np.asarray(canvas) > 0


def _extent_range(size, large, large_fraction):
    '''Side length bounds that keep the full shape on the correct side of
    the area threshold for every drawable kind.'''
    threshold_side = np.sqrt(large_fraction) * size
    if large:
        # Triangles cover half their box, so large boxes need sqrt(2)x.
        low = int(np.ceil(threshold_side * 1.6))
        return low, max(low, int(size * 0.45))
    return max(4, int(size * 0.08)), max(4, int(threshold_side * 0.8))


def _fill(rng, cfg, mask, hue, striped):
    palette = WARM_COLORS if hue == 'warm' else COOL_COLORS
    color = np.array(palette[rng.integers(len(palette))], dtype=np.int64)
    if not striped:
        return np.where(mask[:, :, None], color, -1)
    rows, cols = np.indices(mask.shape)
    stripes = ((rows + cols) // cfg.stripe_width) % 2 == 0
    light = (color + 255) // 2
    pattern = np.where(stripes[:, :, None], color, light)
    return np.where(mask[:, :, None], pattern, -1)


def _sample_instance(rng, cfg, category):
    vocab = cfg.vocabulary
    chosen = [int(rng.choice(group))
              for group in _attribute_groups(vocab, category)]
    names = {vocab.attributes[a] for a in chosen}
    if 'large' in names:
        large = True
    elif 'small' in names:
        large = False
    else:
        large = bool(rng.integers(2))
    return tuple(sorted(chosen)), names, large


def _visible_ok(visible, sizes, threshold):
    for mask, size_name in zip(visible, sizes):
        area = int(mask.sum())
        if area == 0:
            return False
        if size_name == 'large' and area <= threshold:
            return False
        if size_name == 'small' and area >= threshold:
            return False
    return True


def generate_image(rng, cfg):
    '''Returns (pixels uint8 [H,W,3], [(mask, category, attributes), ...]).'''
    size = cfg.image_size
    vocab = cfg.vocabulary
    threshold = cfg.large_fraction * size * size
    pixels = np.full((size, size, 3), BACKGROUND, dtype=np.int64)
    visible, categories, attributes, sizes = [], [], [], []

    count = int(rng.integers(cfg.min_shapes, cfg.max_shapes + 1))
    for _ in range(count):
        category = int(rng.integers(len(vocab.categories)))
        chosen, names, large = _sample_instance(rng, cfg, category)
        low, high = _extent_range(size, large, cfg.large_fraction)
        size_name = next((n for n in ('large', 'small') if n in names), None)
        for _ in range(MAX_PLACEMENT_TRIES):
            extent = int(rng.integers(low, high + 1))
            x = int(rng.integers(0, size - extent + 1))
            y = int(rng.integers(0, size - extent + 1))
            mask = _draw_shape(vocab.categories[category], size, extent, x, y)
            clipped = [m & ~mask for m in visible]
            if _visible_ok(clipped + [mask], sizes + [size_name], threshold):
                break
        else:
            continue
        hue = 'warm' if 'warm' in names else 'cool'
        layer = _fill(rng, cfg, mask, hue, 'striped' in names)
        pixels = np.where(layer >= 0, layer, pixels)
        visible = clipped + [mask]
        categories.append(category)
        attributes.append(chosen)
        sizes.append(size_name)
    return (pixels.astype(np.uint8),
            list(zip(visible, categories, attributes)))


def synth_generate(cfg):
    '''Returns (Dataset, list of uint8 images). Deterministic per seed; each
    image draws from its own sub-seed.'''
    check_synth_config(cfg)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.num_images)
    images, records, instances = [], [], []
    for image_id, seed in enumerate(seeds):
        rng = np.random.Generator(np.random.PCG64(seed))
        pixels, shapes = generate_image(rng, cfg)
        images.append(pixels)
        records.append(
            ImageRecord(image_id, 'images/{:04d}.png'.format(image_id),
                        cfg.image_size, cfg.image_size))
        for mask, category, attributes in shapes:
            instances.append(
                InstanceAnnotation(image_id, rle_encode(mask), category,
                                   attributes))
    dataset = Dataset(cfg.vocabulary, tuple(records), tuple(instances), '.')
    return dataset, images


def config_template(annotations, image_size):
    return {
        'model': {
            'queries': 10,
            'dim': 32,
            'stages': 3,
        },
        'optim': {'steps': 2000, 'batch_size': 2},
        'data': {
            'train': annotations,
            'val': annotations,
            'image_size': image_size,
        },
        'seed': 0,
    }


def write_dataset(cfg, out_dir):
    '''Writes images/, annotations.json and a config.yaml that trains on
    them. Returns the written Dataset.'''
    dataset, images = synth_generate(cfg)
    compat.makedirs(out_dir)
    for record, pixels in zip(dataset.images, images):
        save_image(pixels, os.path.join(out_dir, record.file))
    annotations_path = os.path.join(out_dir, ANNOTATIONS_FILE_NAME)
    save_annotations(dataset, annotations_path)
    template = config_template(ANNOTATIONS_FILE_NAME, cfg.image_size)
    with open(os.path.join(out_dir, 'config.yaml'), 'w') as f:
        yaml.safe_dump(template, f, default_flow_style=False)
    return dataset._replace(root=os.path.abspath(out_dir))
