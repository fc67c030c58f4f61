#! /usr/bin/env python3

import collections
import os
import sys

import docopt

# Keep this import above the others: async_helpers sets the global event loop
# at import time.
from .async_helpers import run_task

from . import checkpoint as ckpt
from . import compat
from .dataset import load_annotations, load_image
from .error import PrintableError, error_context
from .evaluate import evaluate, predict
from . import gradcheck
from .keyval import KeyValFile
from . import metrics
from . import parser
from .render import instance_label, write_outputs
from .runtime import CommandLineError, Runtime
from . import synth
from . import train as training

__doc__ = '''\
Usage:
    queryseg [-hqv] <command> [<args>...]
    queryseg [--help|--version]

Commands:
    synth      generate a synthetic shapes dataset
    train      train a model from a config file
    eval       evaluate a checkpoint on an annotated dataset
    infer      segment one image and render the instances
    gradcheck  verify every gradient against finite differences
    help       show help for subcommands, same as -h/--help

Options:
    -h --help     so much help
    -q --quiet    don't print anything
    -v --verbose  print everything
'''

CHECKPOINT_FILE_NAME = 'checkpoint.qsl'
REPORT_FILE_NAME = 'report.txt'
KEYVAL_FILE_NAME = 'report.kv'


def queryseg_command(name, doc):
    def decorator(f):
        COMMAND_FNS[name] = f
        COMMAND_DOCS[name] = doc
        return f

    return decorator


COMMAND_FNS = {}
COMMAND_DOCS = {}


@queryseg_command('synth', '''\
Usage:
    queryseg synth --out DIR [-hqv] [--images N] [--seed S] [--size PX]
                   [--max-shapes K]

Draws circles, rectangles and triangles with visible attributes (stripes,
size, warm or cool colour) and writes the images, an annotation file and a
config.yaml that trains on them.

Options:
    -h --help         shapes all the way down
    --images N        number of images [default: 8]
    --max-shapes K    most shapes per image [default: 3]
    --out DIR         output directory
    --seed S          random seed [default: 0]
    --size PX         image width and height [default: 128]
    -q --quiet        don't print anything
    -v --verbose      print everything
''')
async def do_synth(params):
    args = params.args
    max_shapes = _int_arg(args, '--max-shapes', 0)
    cfg = synth.synth_config(
        num_images=_int_arg(args, '--images', 0),
        image_size=_int_arg(args, '--size', 32),
        min_shapes=min(1, max_shapes),
        max_shapes=max_shapes,
        seed=_int_arg(args, '--seed', 0))
    dataset = synth.write_dataset(cfg, args['--out'])
    params.runtime.display.print('wrote {} images with {} instances to {}'
                                 .format(len(dataset.images),
                                         len(dataset.instances),
                                         args['--out']))


@queryseg_command('train', '''\
Usage:
    queryseg train --config FILE [-hqv] [--out DIR] [--seed S] [--steps N]
                   [--resume CKPT]

Trains a model on the config's data.train split and writes
checkpoint.qsl and losses.jsonl to the output directory. Flags override
the values in the config file. With --resume, training continues from the
checkpoint's step, parameters and optimizer state.

Options:
    --config FILE   YAML run config
    -h --help       learning, in theory
    --out DIR       output directory [default: queryseg-out]
    --resume CKPT   continue training from this checkpoint
    --seed S        override the config seed
    --steps N       override optim.steps
    -q --quiet      don't print anything
    -v --verbose    print everything
''')
async def do_train(params):
    args = params.args
    config_path = args['--config']
    run_config = parser.parse_file(config_path)
    if not params.runtime.quiet:
        parser.warn_duplicate_keys(config_path)
    if args['--seed'] is not None:
        run_config = run_config._replace(seed=_int_arg(args, '--seed', 0))
    if args['--steps'] is not None:
        run_config = run_config._replace(optim=run_config.optim._replace(
            steps=_int_arg(args, '--steps', 0)))
    train_path = training.resolve_data_path(config_path,
                                            run_config.data.train)
    if train_path is None:
        raise CommandLineError('{} does not set data.train.', config_path)
    # The checkpoint keeps absolute data paths, for eval to find data.val.
    run_config = run_config._replace(data=run_config.data._replace(
        train=train_path,
        val=training.resolve_data_path(config_path, run_config.data.val)))
    resume = None
    if args['--resume'] is not None:
        resume = ckpt.load_checkpoint(args['--resume'])
    with error_context(train_path):
        dataset = load_annotations(train_path)

    runtime = params.runtime
    with runtime.display.get_handle('train') as handle:
        result = training.train(
            run_config, dataset, handle,
            log_path=runtime.output_path(training.LOSS_LOG_FILE_NAME),
            resume=resume)
    checkpoint_path = runtime.output_path(CHECKPOINT_FILE_NAME)
    ckpt.save_checkpoint(result.checkpoint, checkpoint_path)
    if result.log:
        runtime.display.print(
            training.format_log_entry(result.log[-1],
                                      run_config.optim.steps))
    runtime.display.print('wrote ' + checkpoint_path)


@queryseg_command('eval', '''\
Usage:
    queryseg eval <checkpoint> [<annotations>] [-hqv] [--out DIR] [-j N]
                  [--single-threshold]

Runs the checkpoint over every image of the annotation file and reports
AP_IoU, AP_IoU+F1 and their gap G. The report is printed and written to
report.txt and report.kv in the output directory.
The annotation file defaults to the data.val split the checkpoint was
trained with.

Options:
    -h --help           how well did it go?
    -j N --jobs N       max number of images evaluated in parallel
    --out DIR           output directory [default: queryseg-out]
    --single-threshold  use IoU >= 0.5 and F1 >= 0.5 instead of the
                        0.50:0.05:0.95 grids
    -q --quiet          don't print anything
    -v --verbose        print everything
''')
async def do_eval(params):
    args = params.args
    runtime = params.runtime
    checkpoint = ckpt.load_checkpoint(args['<checkpoint>'])
    model = ckpt.model_from_checkpoint(checkpoint)
    config = checkpoint.config
    annotations_path = args['<annotations>'] or config.data.val
    if annotations_path is None:
        raise CommandLineError('No annotation file given, and the checkpoint '
                               'has no data.val split.')
    with error_context(annotations_path):
        dataset = load_annotations(annotations_path)
    report = await evaluate(model, checkpoint.vocabulary, dataset,
                            config.eval, config.data.image_size,
                            runtime.display, jobs=runtime.jobs,
                            single_threshold=args['--single-threshold'],
                            verbose=runtime.verbose)
    table = metrics.format_report(report)
    with open(runtime.output_path(REPORT_FILE_NAME), 'w') as f:
        f.write(table)
    KeyValFile(runtime.output_path(KEYVAL_FILE_NAME)).update(
        metrics.report_items(report))
    if not runtime.quiet:
        print(table, end='')


@queryseg_command('infer', '''\
Usage:
    queryseg infer <checkpoint> <image> [-hqv] [--out DIR]
                   [--score-threshold T]

Segments one image. Writes <image>.overlay.png with every instance drawn
and labelled, <image>.txt with one line per instance, and <image>.json
with the instances and their RLE masks.

Options:
    -h --help              what's in the picture?
    --out DIR              output directory [default: queryseg-out]
    --score-threshold T    drop instances scoring below T, by default the
                           config's eval.score_threshold
    -q --quiet             don't print anything
    -v --verbose           print everything
''')
async def do_infer(params):
    args = params.args
    runtime = params.runtime
    checkpoint = ckpt.load_checkpoint(args['<checkpoint>'])
    model = ckpt.model_from_checkpoint(checkpoint)
    pixels = load_image(args['<image>'])
    threshold = checkpoint.config.eval.score_threshold
    if args['--score-threshold'] is not None:
        threshold = _float_arg(args, '--score-threshold')
    predictions = predict(model, pixels, checkpoint.config.data.image_size,
                          threshold)
    stem = os.path.splitext(os.path.basename(args['<image>']))[0]
    write_outputs(runtime.out_dir, stem, pixels, predictions,
                  checkpoint.vocabulary)
    for i, prediction in enumerate(predictions):
        runtime.display.print('{}: {}'.format(
            i, instance_label(prediction, checkpoint.vocabulary)))


@queryseg_command('gradcheck', '''\
Usage:
    queryseg gradcheck [-hqv] [--seed S]

Compares autodiff gradients with central finite differences for every
registered operation and for the full model loss. Exits nonzero if any
check fails.

Options:
    -h --help     trust, but verify
    --seed S      random seed [default: 0]
    -q --quiet    don't print anything
    -v --verbose  print everything
''')
async def do_gradcheck(params):
    results = gradcheck.run_gradcheck(seed=_int_arg(params.args, '--seed', 0))
    params.runtime.display.print(gradcheck.format_results(results), end='')
    if not all(r.passed for r in results):
        return 1


def _int_arg(args, flag, minimum):
    try:
        value = int(args[flag])
    except (TypeError, ValueError):
        raise CommandLineError('Argument to {} must be a number.', flag)
    if value < minimum:
        raise CommandLineError('Argument to {} must be at least {}.', flag,
                               minimum)
    return value


def _float_arg(args, flag):
    try:
        return float(args[flag])
    except (TypeError, ValueError):
        raise CommandLineError('Argument to {} must be a number.', flag)


def get_version():
    version_file = os.path.join(compat.MODULE_ROOT, 'VERSION')
    with open(version_file) as f:
        return f.read().strip()


def print_red(*args, **kwargs):
    if compat.is_fancy_terminal():
        sys.stdout.write('\x1b[31m')
    print(*args, **kwargs)
    if compat.is_fancy_terminal():
        sys.stdout.write('\x1b[39m')


def maybe_print_help_and_return(args):
    if args['--version']:
        print(get_version())
        return 0

    help = args['--help']
    command = args['<command>']
    if command == "help":
        help = True
        help_args = args['<args>']
        command = help_args[0] if help_args else None

    if command is None:
        print(__doc__, end='')
        return 0

    if command not in COMMAND_DOCS:
        print(__doc__, end='', file=sys.stderr)
        return 1

    if help:
        print(COMMAND_DOCS[command], end='')
        return 0

    return None


def merged_args_dicts(global_args, subcommand_args):
    '''Merges the toplevel and subcommand docopt parses. A flag given at the
    toplevel stays on even when the subcommand parse reports it False.'''
    merged = global_args.copy()
    for key, val in subcommand_args.items():
        if key not in merged:
            merged[key] = val
        elif type(merged[key]) is type(val) is bool:
            merged[key] = merged[key] or val
        else:
            raise RuntimeError("Unmergable args.")
    return merged


def docopt_parse_args(argv):
    args = docopt.docopt(__doc__, argv, help=False, options_first=True)
    command = args['<command>']
    # `queryseg eval --help` has to work without the required arguments.
    if {'-h', '--help'} & set(args['<args>']):
        args['--help'] = True
    # Unknown commands and help requests have no subcommand parse.
    if command in COMMAND_DOCS and not args['--help']:
        command_argv = [command] + args['<args>']
        try:
            command_args = docopt.docopt(COMMAND_DOCS[command], command_argv,
                                         help=False)
        except docopt.DocoptExit:
            raise CommandLineError('Invalid arguments.\n\n{}',
                                   COMMAND_DOCS[command].strip())
        args = merged_args_dicts(args, command_args)
    return args


CommandParams = collections.namedtuple('CommandParams', ['args', 'runtime'])


# Called as a setup.py entry point, or from __main__.py
# (`python3 -m queryseg`).
def main(*, argv=None, env=None, nocatch=False):
    if argv is None:
        argv = sys.argv[1:]
    if env is None:
        env = os.environ.copy()

    try:
        args = docopt_parse_args(argv)
        ret = maybe_print_help_and_return(args)
        if ret is not None:
            return ret
        runtime = Runtime(args, env)
        params = CommandParams(args, runtime)
        command_fn = COMMAND_FNS[args['<command>']]
        return run_task(command_fn(params)) or 0
    except PrintableError as e:
        if nocatch or (hasattr(e, 'message') and '--verbose' in argv):
            raise
        print_red(e.message, end='' if e.message.endswith('\n') else '\n')
        return 1
