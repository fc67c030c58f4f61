import os

from queryseg import display
import queryseg.runtime as runtime
import shared


def cli_args(**flags):
    args = {'--quiet': False, '--verbose': False}
    for name, value in flags.items():
        args['--' + name] = value
    return args


class RuntimeTest(shared.QuerySegTest):
    def test_parallel_limit(self):
        self.assertIsNone(runtime._get_parallel_limit(cli_args(), {}))
        self.assertEqual(
            3, runtime._get_parallel_limit(cli_args(), {'QUERYSEG_JOBS': '3'}))
        # The flag wins over the environment.
        self.assertEqual(
            5,
            runtime._get_parallel_limit(cli_args(jobs='5'),
                                        {'QUERYSEG_JOBS': '3'}))
        for bad in ('0', '-2', 'lots'):
            with self.assertRaises(runtime.CommandLineError):
                runtime._get_parallel_limit(cli_args(jobs=bad), {})

    def test_quiet_and_verbose_conflict(self):
        args = cli_args()
        args['--quiet'] = args['--verbose'] = True
        with self.assertRaises(runtime.CommandLineError):
            runtime.Runtime(args, {})

    def test_displays(self):
        quiet = cli_args()
        quiet['--quiet'] = True
        self.assertIsInstance(runtime.get_display(quiet),
                              display.QuietDisplay)
        verbose = cli_args()
        verbose['--verbose'] = True
        self.assertIsInstance(runtime.get_display(verbose),
                              display.VerboseDisplay)

    def test_output_path(self):
        out = os.path.join(shared.create_dir(), 'run1')
        rt = runtime.Runtime(cli_args(out=out), {})
        self.assertFalse(os.path.exists(out))
        path = rt.output_path('report.txt')
        self.assertEqual(os.path.join(out, 'report.txt'), path)
        self.assertTrue(os.path.isdir(out))

    def test_default_out_dir(self):
        rt = runtime.Runtime(cli_args(), {})
        self.assertEqual(runtime.DEFAULT_OUT_DIR, rt.out_dir)
        self.assertIsNone(rt.jobs)
