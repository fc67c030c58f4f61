import os

from . import compat
from . import display
from .error import PrintableError

DEFAULT_OUT_DIR = 'queryseg-out'


class CommandLineError(PrintableError):
    pass


class Runtime:
    '''Settings shared by every command: output verbosity, the display, the
    job limit and the output directory.'''

    def __init__(self, args, env):
        if args['--quiet'] and args['--verbose']:
            raise CommandLineError(
                "queryseg can't be quiet and verbose at the same time.")
        self.quiet = args['--quiet']
        self.verbose = args['--verbose']
        self.env = env
        self.display = get_display(args)
        self.jobs = _get_parallel_limit(args, env)
        self.out_dir = args.get('--out') or DEFAULT_OUT_DIR

    def output_path(self, *parts):
        compat.makedirs(self.out_dir)
        return os.path.join(self.out_dir, *parts)


def _get_parallel_limit(args, env):
    '''-j wins over $QUERYSEG_JOBS. None means "use the config value".'''
    jobs = args.get('--jobs') or env.get('QUERYSEG_JOBS')
    if jobs is None:
        return None
    try:
        parallel = int(jobs)
    except ValueError:
        raise CommandLineError('Argument to --jobs must be a number.')
    if parallel <= 0:
        raise CommandLineError('Argument to --jobs must be 1 or more.')
    return parallel


def get_display(args):
    if args['--quiet']:
        return display.QuietDisplay()
    elif args['--verbose']:
        return display.VerboseDisplay()
    elif compat.is_fancy_terminal():
        return display.FancyDisplay()
    else:
        return display.QuietDisplay()
