from collections import OrderedDict

import numpy as np

from queryseg import gradcheck
from queryseg import tensor as T
import shared

PRIMITIVES = ('add', 'sub', 'mul', 'div', 'neg', 'power', 'broadcast_to',
              'relu', 'sigmoid', 'log_sigmoid', 'softmax', 'clamp',
              'reduce_sum', 'reduce_mean', 'reshape', 'transpose', 'concat',
              'stack', 'getitem', 'matmul', 'conv2d', 'layer_norm',
              'bilinear_resize', 'focal_loss', 'dice_loss', 'attribute_bce',
              'group_object_features')


class GradCheckTest(shared.QuerySegTest):
    def test_every_primitive_is_registered(self):
        for name in PRIMITIVES:
            self.assertIn(name, gradcheck.CASES)
        self.assertIn('model_loss', gradcheck.CASES)

    def test_primitives_over_seeds(self):
        for seed in range(20):
            for name in PRIMITIVES:
                result = gradcheck.check_case(name, gradcheck.CASES[name],
                                              seed)
                self.assertTrue(
                    result.passed,
                    '{} failed at seed {} with error {}'.format(
                        name, seed, result.error))

    def test_decoder_blocks(self):
        for name in ('multi_layer_render', 'dynamic_conv',
                     'query_self_update'):
            result = gradcheck.check_case(name, gradcheck.CASES[name])
            self.assertTrue(result.passed, '{}: {}'.format(name,
                                                           result.error))

    def test_model_loss(self):
        results = gradcheck.run_gradcheck(
            cases={'model_loss': gradcheck.CASES['model_loss']})
        self.assertEqual(1, len(results))
        self.assertTrue(results[0].passed, results[0].error)

    def test_wrong_gradient_is_caught(self):
        def wrong_square(a):
            out = a.data**2
            # d/da a^2 is 2a, not 3a.
            return T._op(out, (a, ), lambda g: (g * 3 * a.data, ))

        registry = OrderedDict()

        @gradcheck.gradcheck_case('wrong_square', registry)
        def _case(rng):
            return (lambda x: T.reduce_sum(wrong_square(x)),
                    [T.Tensor(rng.uniform(0.5, 1.5, 4), requires_grad=True)],
                    None)

        results = gradcheck.run_gradcheck(cases=registry)
        self.assertFalse(results[0].passed)
        self.assertGreater(results[0].error, 0.1)
        report = gradcheck.format_results(results)
        self.assertIn('1 of 1 checks failed: wrong_square', report)

    def test_duplicate_registration(self):
        registry = OrderedDict()
        gradcheck.gradcheck_case('twice', registry)(lambda rng: None)
        with self.assertRaises(gradcheck.GradCheckError):
            gradcheck.gradcheck_case('twice', registry)(lambda rng: None)

    def test_grad_check_restores_input(self):
        x = T.Tensor(np.array([0.3, -0.7]), requires_grad=True)
        before = x.data.copy()
        error = gradcheck.grad_check(lambda t: T.reduce_sum(t * t), x)
        self.assertLess(error, 1e-6)
        self.assertTrue(np.array_equal(before, x.data))
        self.assertIsNone(x.grad)

    def test_format_results_all_passed(self):
        results = [gradcheck.GradCheckResult('add', 1e-9, True)]
        self.assertTrue(
            gradcheck.format_results(results).endswith(
                'all 1 checks passed\n'))
