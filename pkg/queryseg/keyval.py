import os
import shutil
import tempfile

from . import compat
from .error import PrintableError


class KeyValError(PrintableError):
    pass


class KeyValFile:
    '''A flat "key = value" text file, one pair per line, in insertion
    order. Every change rewrites the whole file atomically.'''

    SEPARATOR = ' = '

    def __init__(self, path):
        self._path = path
        compat.makedirs(os.path.dirname(os.path.abspath(path)))
        self._items = {}
        if os.path.exists(path):
            self._items = read_keyval(path)

    def update(self, pairs):
        for key, val in pairs:
            self._check(key, val)
            self._items[key] = val
        self._flush()

    def _check(self, key, val):
        if not key or self.SEPARATOR in key or '\n' in key:
            raise KeyValError('Invalid key {}.', repr(key))
        if '\n' in val:
            raise KeyValError('Value of {} spans lines.', key)

    def _flush(self):
        # Write to a tmp file first, to avoid partial reads.
        directory = os.path.dirname(os.path.abspath(self._path))
        fd, tmp_path = tempfile.mkstemp(dir=directory)
        with os.fdopen(fd, 'w') as f:
            for key, val in self._items.items():
                f.write(key + self.SEPARATOR + val + '\n')
        shutil.move(tmp_path, self._path)


def read_keyval(path):
    items = {}
    with open(path) as f:
        for line_num, line in enumerate(f, start=1):
            line = line.rstrip('\n')
            if not line:
                continue
            if KeyValFile.SEPARATOR not in line:
                raise KeyValError('{}:{}: expected "key = value".', path,
                                  line_num)
            key, val = line.split(KeyValFile.SEPARATOR, 1)
            items[key] = val
    return items
