'''Checkpoint files.

Layout, all integers little-endian:

    b"QSL1"                     magic
    u32                         format version
    u32 n, n bytes              UTF-8 JSON: {"config": ..., "vocabulary": ...}
    u64                         step counter
    tensor table                model parameters
    tensor table                optimizer state

A tensor table is a u32 count followed by, per tensor: u32 name length, the
UTF-8 name, u32 rank, rank u32 extents and the values as little-endian
64-bit floats in row-major order.
'''

from collections import OrderedDict, namedtuple
import json
import os
import shutil
import struct
import tempfile

import numpy as np

from . import config as cfg
from .dataset import vocabulary_from_blob, vocabulary_to_blob
from .error import PrintableError
from .model import Model
from . import parser

MAGIC = b'QSL1'
FORMAT_VERSION = 1

Checkpoint = namedtuple(
    'Checkpoint',
    ['config', 'vocabulary', 'step', 'parameters', 'optimizer'])


class CheckpointError(PrintableError):
    pass


def _pack_table(table):
    chunks = [struct.pack('<I', len(table))]
    for name, values in table.items():
        values = np.ascontiguousarray(values, dtype='<f8')
        encoded = name.encode('utf8')
        chunks.append(struct.pack('<I', len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack('<I', values.ndim))
        chunks.append(struct.pack('<{}I'.format(values.ndim), *values.shape))
        chunks.append(values.tobytes())
    return b''.join(chunks)


def checkpoint_bytes(checkpoint):
    header = json.dumps({
        'config': cfg.to_blob(checkpoint.config),
        'vocabulary': vocabulary_to_blob(checkpoint.vocabulary),
    }, sort_keys=True).encode('utf8')
    return b''.join([
        MAGIC,
        struct.pack('<I', FORMAT_VERSION),
        struct.pack('<I', len(header)),
        header,
        struct.pack('<Q', checkpoint.step),
        _pack_table(checkpoint.parameters),
        _pack_table(checkpoint.optimizer),
    ])


class _Reader:
    def __init__(self, data):
        self.data = data
        self.offset = 0

    def take(self, size):
        if self.offset + size > len(self.data):
            raise CheckpointError('Checkpoint is truncated at byte {}.',
                                  self.offset)
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def table(self):
        (count, ) = self.unpack('<I')
        table = OrderedDict()
        for _ in range(count):
            (length, ) = self.unpack('<I')
            name = self.take(length).decode('utf8')
            (rank, ) = self.unpack('<I')
            shape = self.unpack('<{}I'.format(rank))
            size = int(np.prod(shape, dtype=np.int64))
            values = np.frombuffer(self.take(8 * size), dtype='<f8')
            table[name] = values.astype(np.float64).reshape(shape)
        return table


def parse_checkpoint(data):
    reader = _Reader(data)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError('Not a checkpoint file (bad magic).')
    (version, ) = reader.unpack('<I')
    if version != FORMAT_VERSION:
        raise CheckpointError('Unsupported checkpoint version {}.', version)
    (length, ) = reader.unpack('<I')
    try:
        header = json.loads(reader.take(length).decode('utf8'))
    except ValueError as e:
        raise CheckpointError('Corrupt checkpoint header: {}', e) from e
    config = parser.parse_blob(header['config'])
    vocabulary = vocabulary_from_blob(header['vocabulary'])
    (step, ) = reader.unpack('<Q')
    parameters = reader.table()
    optimizer = reader.table()
    if reader.offset != len(data):
        raise CheckpointError('{} unexpected bytes after the checkpoint.',
                              len(data) - reader.offset)
    return Checkpoint(config, vocabulary, step, parameters, optimizer)


def save_checkpoint(checkpoint, path):
    # Write to a tmp file first, to avoid partial reads.
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(dir=directory)
    with os.fdopen(fd, 'wb') as f:
        f.write(checkpoint_bytes(checkpoint))
    shutil.move(tmp_path, path)


def load_checkpoint(path):
    try:
        with open(path, 'rb') as f:
            data = f.read()
    except OSError as e:
        raise CheckpointError("Can't read checkpoint {}: {}", path,
                              e.strerror) from e
    return parse_checkpoint(data)


def model_from_checkpoint(checkpoint):
    model = Model(checkpoint.config.model, checkpoint.config.seed)
    model.store.load_state(checkpoint.parameters)
    return model
