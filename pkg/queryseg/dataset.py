'''Annotation files and image I/O.

An annotation file is one JSON document per split:

    {
      "categories": [{"id": 0, "name": "circle", "supercategory": "round",
                      "attributes": [0, 1, 4, 5]}, ...],
      "attributes": [{"id": 0, "name": "striped", "group": "texture"}, ...],
      "images": [{"id": 0, "file": "images/0000.png", "h": 128, "w": 128}],
      "instances": [{"image_id": 0, "category": 0, "attributes": [0, 2],
                     "rle": {"size": [128, 128], "counts": [...]}}]
    }

A category's "attributes" list is its applicability table. Image paths are
relative to the directory holding the annotation file.
'''

from collections import namedtuple
import json
import os

import numpy as np
from PIL import Image

from . import compat
from .error import PrintableError
from .rle import RLEError, rle_area, rle_decode

Vocabulary = namedtuple('Vocabulary', [
    'categories', 'supercategories', 'attributes', 'attribute_groups',
    'applicability'
])
ImageRecord = namedtuple('ImageRecord', ['id', 'file', 'height', 'width'])
InstanceAnnotation = namedtuple(
    'InstanceAnnotation', ['image_id', 'mask_rle', 'category', 'attributes'])


class SchemaError(PrintableError):
    def __init__(self, location, message, *args, **kwargs):
        super().__init__(message, *args, **kwargs)
        self.location = location
        self.message = '{}: {}'.format(location, self.message)


class ImageError(PrintableError):
    pass


class VocabularyError(PrintableError):
    pass


EMPTY_VOCABULARY = Vocabulary((), (), (), (), ())


class Dataset(
        namedtuple('Dataset', ['vocabulary', 'images', 'instances', 'root'])):
    def instances_for(self, image_id):
        return [i for i in self.instances if i.image_id == image_id]

    def image_path(self, record):
        return os.path.join(self.root, record.file)

    def category_histogram(self):
        counts = [0] * len(self.vocabulary.categories)
        for instance in self.instances:
            counts[instance.category] += 1
        return counts


def vocabulary_to_blob(vocabulary):
    return {
        'categories': [{
            'id': i,
            'name': name,
            'supercategory': vocabulary.supercategories[i],
            'attributes': list(vocabulary.applicability[i]),
        } for i, name in enumerate(vocabulary.categories)],
        'attributes': [{
            'id': i,
            'name': name,
            'group': vocabulary.attribute_groups[i],
        } for i, name in enumerate(vocabulary.attributes)],
    }


def vocabulary_from_blob(blob, location='$'):
    attributes = _list(blob, 'attributes', location)
    attr_names, groups = [], []
    for i, entry in enumerate(attributes):
        where = '{}.attributes[{}]'.format(location, i)
        _expect_id(entry, i, where)
        attr_names.append(_str(entry, 'name', where))
        groups.append(_str(entry, 'group', where, default=None))

    categories = _list(blob, 'categories', location)
    names, supers, applicability = [], [], []
    for i, entry in enumerate(categories):
        where = '{}.categories[{}]'.format(location, i)
        _expect_id(entry, i, where)
        names.append(_str(entry, 'name', where))
        supers.append(_str(entry, 'supercategory', where, default=None))
        applicable = _id_list(entry, 'attributes', len(attr_names), where)
        applicability.append(applicable)
    return Vocabulary(
        tuple(names), tuple(supers), tuple(attr_names), tuple(groups),
        tuple(applicability))


def check_vocabulary(expected, found):
    '''A model only works with the vocabulary it was trained on.'''
    if expected.categories != found.categories:
        raise VocabularyError(
            'Category vocabulary mismatch.\nmodel: {}\ndataset: {}',
            ', '.join(expected.categories), ', '.join(found.categories))
    if expected.attributes != found.attributes:
        raise VocabularyError(
            'Attribute vocabulary mismatch.\nmodel: {}\ndataset: {}',
            ', '.join(expected.attributes), ', '.join(found.attributes))


def load_annotations(path):
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise SchemaError(path, "can't read annotations: {}",
                          e.strerror) from e
    root = os.path.dirname(os.path.abspath(path))
    if not text.strip():
        return Dataset(EMPTY_VOCABULARY, (), (), root)
    try:
        blob = json.loads(text)
    except ValueError as e:
        raise SchemaError('$', 'invalid JSON in {}: {}', path, e) from e
    return dataset_from_blob(blob, root)


def dataset_from_blob(blob, root='.'):
    if not isinstance(blob, dict):
        raise SchemaError('$', 'expected an object')
    vocabulary = vocabulary_from_blob(blob)

    images = []
    image_ids = {}
    for i, entry in enumerate(_list(blob, 'images', '$')):
        where = '$.images[{}]'.format(i)
        record = ImageRecord(
            _int(entry, 'id', where), _str(entry, 'file', where),
            _int(entry, 'h', where, minimum=1),
            _int(entry, 'w', where, minimum=1))
        if record.id in image_ids:
            raise SchemaError(where + '.id', 'duplicate image id {}',
                              record.id)
        image_ids[record.id] = record
        images.append(record)

    instances = []
    for i, entry in enumerate(_list(blob, 'instances', '$')):
        where = '$.instances[{}]'.format(i)
        instance = _parse_instance(entry, where, vocabulary, image_ids)
        instances.append(instance)

    unknown = set(blob) - {'categories', 'attributes', 'images', 'instances'}
    if unknown:
        raise SchemaError('$', 'unknown fields: {}',
                          ', '.join(sorted(unknown)))
    return Dataset(vocabulary, tuple(images), tuple(instances), root)


def _parse_instance(entry, where, vocabulary, image_ids):
    image_id = _int(entry, 'image_id', where)
    if image_id not in image_ids:
        raise SchemaError(where + '.image_id', 'unknown image id {}',
                          image_id)
    category = _int(entry, 'category', where)
    if not 0 <= category < len(vocabulary.categories):
        raise SchemaError(where + '.category', 'unknown category id {}',
                          category)
    attributes = _id_list(entry, 'attributes', len(vocabulary.attributes),
                          where)
    applicable = set(vocabulary.applicability[category])
    for j, attribute in enumerate(attributes):
        if attribute not in applicable:
            raise SchemaError(
                '{}.attributes[{}]'.format(where, j),
                'attribute "{}" does not apply to category "{}"',
                vocabulary.attributes[attribute],
                vocabulary.categories[category])
    if not isinstance(entry.get('rle'), dict):
        raise SchemaError(where + '.rle', 'expected an RLE object')
    record = image_ids[image_id]
    rle = {
        'size': entry['rle'].get('size'),
        'counts': entry['rle'].get('counts')
    }
    try:
        rle_decode(rle, record.height, record.width)
    except RLEError as e:
        raise SchemaError(where + '.rle', '{}', e.message) from e
    rle = {
        'size': [int(v) for v in rle['size']],
        'counts': [int(c) for c in rle['counts']]
    }
    if rle_area(rle) == 0:
        raise SchemaError(where + '.rle', 'mask is empty')
    return InstanceAnnotation(image_id, rle, category, attributes)


def dataset_to_blob(dataset):
    blob = vocabulary_to_blob(dataset.vocabulary)
    blob['images'] = [{
        'id': record.id,
        'file': record.file,
        'h': record.height,
        'w': record.width
    } for record in dataset.images]
    blob['instances'] = [{
        'image_id': instance.image_id,
        'category': instance.category,
        'attributes': list(instance.attributes),
        'rle': instance.mask_rle,
    } for instance in dataset.instances]
    return blob


def save_annotations(dataset, path):
    compat.makedirs(os.path.dirname(os.path.abspath(path)))
    with open(path, 'w') as f:
        json.dump(dataset_to_blob(dataset), f)
        f.write('\n')


def load_image(path):
    '''Reads an 8-bit RGB image as floats in [0,1], shaped [3,H,W].'''
    try:
        with Image.open(path) as image:
            pixels = np.asarray(image.convert('RGB'), dtype=np.float64)
    except (OSError, ValueError) as e:
        raise ImageError("Can't read image {}: {}", path, e) from e
    return pixels.transpose(2, 0, 1) / 255.0


def save_image(pixels, path):
    '''pixels: uint8 [H,W,3].'''
    compat.makedirs(os.path.dirname(os.path.abspath(path)))
    Image.fromarray(np.asarray(pixels, dtype=np.uint8), 'RGB').save(path)


def _list(blob, name, where):
    value = blob.get(name, [])
    if not isinstance(value, list):
        raise SchemaError('{}.{}'.format(where, name), 'expected a list')
    for i, entry in enumerate(value):
        if not isinstance(entry, dict):
            raise SchemaError('{}.{}[{}]'.format(where, name, i),
                              'expected an object')
    return value


def _int(entry, name, where, minimum=None):
    value = entry.get(name)
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError('{}.{}'.format(where, name),
                          'expected an integer, found {}', repr(value))
    if minimum is not None and value < minimum:
        raise SchemaError('{}.{}'.format(where, name),
                          'must be at least {}, found {}', minimum, value)
    return value


def _str(entry, name, where, default=''):
    if default is None and entry.get(name) is None:
        return None
    value = entry.get(name)
    if not isinstance(value, str):
        raise SchemaError('{}.{}'.format(where, name),
                          'expected a string, found {}', repr(value))
    return value


def _expect_id(entry, index, where):
    if _int(entry, 'id', where) != index:
        raise SchemaError(where + '.id', 'ids must be 0, 1, 2, ... in order')


def _id_list(entry, name, limit, where):
    '''A sorted, duplicate-free list of ids in [0, limit).'''
    value = entry.get(name, [])
    if not isinstance(value, list):
        raise SchemaError('{}.{}'.format(where, name), 'expected a list')
    for j, item in enumerate(value):
        location = '{}.{}[{}]'.format(where, name, j)
        if isinstance(item, bool) or not isinstance(item, int):
            raise SchemaError(location, 'expected an integer id, found {}',
                              repr(item))
        if not 0 <= item < limit:
            raise SchemaError(location, 'unknown attribute id {}', item)
    if list(value) != sorted(set(value)):
        raise SchemaError('{}.{}'.format(where, name),
                          'ids must be sorted and unique')
    return tuple(value)
