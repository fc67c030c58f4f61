import numpy as np

from queryseg import encoder
from queryseg.error import ShapeError
from queryseg import nn
from queryseg import tensor as T
import shared


class EncoderTest(shared.QuerySegTest):
    def setUp(self):
        self.cfg = shared.tiny_model_config()
        self.store = nn.ParamStore(seed=5)
        self.encoder = encoder.Encoder(self.store, self.cfg)
        image = shared.rng(1).uniform(size=(3, 64, 32))
        self.image = T.Tensor(image)

    def test_stage_widths(self):
        self.assertEqual((4, 8, 16, 32), encoder.stage_widths(32))
        self.assertEqual((1, 2, 4, 8), encoder.stage_widths(8))

    def test_pad_image(self):
        self.assertEqual(64, encoder.padded_extent(33))
        self.assertEqual(64, encoder.padded_extent(64))
        padded = encoder.pad_image(np.ones((3, 40, 33)))
        self.assertEqual((3, 64, 64), padded.shape)
        self.assertEqual(40 * 33 * 3, padded.sum())
        with self.assertRaises(ShapeError):
            encoder.pad_image(np.ones((3, 31, 64)))

    def test_positional_encoding(self):
        encoding = encoder.positional_encoding(8, 4, 6)
        self.assertEqual((8, 4, 6), encoding.shape)
        self.assertTrue(np.all(np.abs(encoding) <= 1.0))
        # Row channels are constant along each row, column channels along
        # each column.
        self.assertAllClose(encoding[:4, :, :1].repeat(6, axis=2),
                            encoding[:4])
        self.assertAllClose(encoding[4:, :1, :].repeat(4, axis=1),
                            encoding[4:])
        with self.assertRaises(ValueError):
            encoding[0, 0, 0] = 1.0

    def test_pyramid_shapes(self):
        output = self.encoder(self.image)
        shapes = [level.shape for level in output.pyramid.levels]
        self.assertEqual([(8, 16, 8), (8, 8, 4), (8, 4, 2), (8, 2, 1)],
                         shapes)
        self.assertEqual((8, 16, 8), output.pyramid.fused.shape)
        self.assertEqual((3, 16, 8), output.masks.shape)
        self.assertEqual((3, 8), output.queries.obj.shape)
        self.assertEqual((3, 8), output.queries.atr.shape)

    def test_object_queries_are_mask_kernels(self):
        output = self.encoder(self.image)
        kernel = self.store['encoder.mask_init.weight'].data.reshape(3, 8)
        self.assertAllClose(kernel, output.queries.obj.data)
        self.assertIs(self.store['encoder.attribute_queries'],
                      output.queries.atr)

    def test_shared_mode_has_no_attribute_table(self):
        store = nn.ParamStore(seed=5)
        shared_encoder = encoder.Encoder(
            store, self.cfg._replace(query_mode='shared'))
        self.assertNotIn('encoder.attribute_queries', store)
        output = shared_encoder(self.image)
        self.assertIs(output.queries.obj, output.queries.atr)

    def test_rejects_unpadded_input(self):
        with self.assertRaises(ShapeError):
            self.encoder(T.Tensor(np.zeros((3, 40, 32))))
        with self.assertRaises(ShapeError):
            self.encoder(T.Tensor(np.zeros((1, 32, 32))))

    def test_query_state_shapes_must_agree(self):
        with self.assertRaises(ShapeError):
            encoder.query_state(T.zeros((3, 8)), T.zeros((2, 8)))
