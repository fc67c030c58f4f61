import json
import os

import numpy as np
from PIL import Image, ImageDraw

from . import compat
from .rle import rle_encode

PALETTE = ((230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
           (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
           (210, 245, 60), (250, 190, 190))
ALPHA = 0.5


def instance_label(prediction, vocabulary):
    names = ', '.join(vocabulary.attributes[a]
                      for a in prediction.attributes) or '-'
    return '{} {:.2f} [{}]'.format(vocabulary.categories[prediction.category],
                                   prediction.score, names)


def overlay(pixels, predictions, vocabulary):
    '''Blends one colour per instance over a float [3,H,W] image and writes
    the instance label at the top-left of its mask. Returns a PIL image.'''
    canvas = (pixels.transpose(1, 2, 0) * 255.0).astype(np.float64)
    for i, prediction in enumerate(predictions):
        color = np.array(PALETTE[i % len(PALETTE)], dtype=np.float64)
        mask = prediction.mask
        canvas[mask] = (1 - ALPHA) * canvas[mask] + ALPHA * color
    image = Image.fromarray(np.clip(canvas, 0, 255).astype(np.uint8), 'RGB')
    draw = ImageDraw.Draw(image)
    for i, prediction in enumerate(predictions):
        rows, cols = np.nonzero(prediction.mask)
        draw.text((int(cols.min()), int(rows.min())),
                  '{}: {}'.format(i, instance_label(prediction, vocabulary)),
                  fill=PALETTE[i % len(PALETTE)])
    return image


def instance_dump(predictions, vocabulary):
    return [{
        'query': p.query,
        'category': p.category,
        'category_name': vocabulary.categories[p.category],
        'score': p.score,
        'attributes': list(p.attributes),
        'attribute_names': [vocabulary.attributes[a] for a in p.attributes],
        'attribute_scores': list(p.attribute_scores),
        'rle': rle_encode(p.mask),
    } for p in predictions]


def write_outputs(out_dir, stem, pixels, predictions, vocabulary):
    '''Writes <stem>.overlay.png, <stem>.txt and <stem>.json. Returns their
    paths.'''
    compat.makedirs(out_dir)
    base = os.path.join(out_dir, stem)
    overlay(pixels, predictions, vocabulary).save(base + '.overlay.png')
    with open(base + '.txt', 'w') as f:
        for i, prediction in enumerate(predictions):
            f.write('{}: {}\n'.format(i,
                                      instance_label(prediction, vocabulary)))
    with open(base + '.json', 'w') as f:
        json.dump({'instances': instance_dump(predictions, vocabulary)}, f,
                  indent=2)
        f.write('\n')
    return base + '.overlay.png', base + '.txt', base + '.json'
