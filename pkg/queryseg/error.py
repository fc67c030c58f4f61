from contextlib import contextmanager
from textwrap import indent


class PrintableError(Exception):
    '''An error meant for the user. main() prints the message, without a
    traceback unless --verbose is given.'''

    def __init__(self, message, *args, **kwargs):
        self.message = message.format(*args, **kwargs)

    def __str__(self):
        return self.message

    def add_context(self, context):
        self.message = 'In {}:\n{}'.format(context, indent(self.message, '  '))


class ShapeError(PrintableError):
    '''Operands or inputs whose shapes or extents can't work together.'''


class GraphError(PrintableError):
    '''Misuse of the autodiff tape, like backward() from a non-scalar or a
    second backward() through a consumed graph.'''


@contextmanager
def error_context(context, *args):
    '''Prefixes "In <context>:" to any PrintableError raised inside. The
    context is formatted with args when given.'''
    if args:
        context = context.format(*args)
    try:
        yield
    except PrintableError as e:
        e.add_context(context)
        raise
