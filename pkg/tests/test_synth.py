import os

import numpy as np

from queryseg import dataset
from queryseg import parser
from queryseg.rle import rle_decode
from queryseg import synth
import shared


def palette_colors(palette):
    colors = set()
    for color in palette:
        colors.add(tuple(color))
        colors.add(tuple((np.array(color) + 255) // 2))
    return colors


class SynthTest(shared.QuerySegTest):
    def setUp(self):
        self.cfg = synth.synth_config(num_images=6, image_size=64,
                                      max_shapes=4, seed=3)

    def test_deterministic(self):
        first, first_images = synth.synth_generate(self.cfg)
        second, second_images = synth.synth_generate(self.cfg)
        self.assertEqual(first, second)
        for a, b in zip(first_images, second_images):
            self.assertTrue(np.array_equal(a, b))
        other, _ = synth.synth_generate(self.cfg._replace(seed=4))
        self.assertNotEqual(first.instances, other.instances)

    def test_attributes_are_visible(self):
        data, images = synth.synth_generate(self.cfg)
        vocab = data.vocabulary
        threshold = self.cfg.large_fraction * 64 * 64
        warm = palette_colors(synth.WARM_COLORS)
        cool = palette_colors(synth.COOL_COLORS)
        self.assertTrue(data.instances)
        for record, pixels in zip(data.images, images):
            self.assertEqual((64, 64, 3), pixels.shape)
            covered = np.zeros((64, 64), dtype=int)
            for instance in data.instances_for(record.id):
                mask = rle_decode(instance.mask_rle)
                covered += mask
                names = {vocab.attributes[a] for a in instance.attributes}
                applicable = vocab.applicability[instance.category]
                self.assertTrue(set(instance.attributes) <= set(applicable))
                groups = [vocab.attribute_groups[a]
                          for a in instance.attributes]
                self.assertEqual(len(groups), len(set(groups)))
                area = mask.sum()
                self.assertGreater(area, 0)
                if 'large' in names:
                    self.assertGreater(area, threshold)
                if 'small' in names:
                    self.assertLess(area, threshold)
                colors = {tuple(c) for c in pixels[mask]}
                expected = warm if 'warm' in names else cool
                self.assertTrue(colors <= expected, names)
            # Visible masks never overlap.
            self.assertLessEqual(covered.max(), 1)

    def test_triangles_have_no_size_attribute(self):
        data, _ = synth.synth_generate(self.cfg)
        size_ids = {synth.DEFAULT_VOCABULARY.attributes.index(n)
                    for n in ('large', 'small')}
        for instance in data.instances:
            if instance.category == 2:
                self.assertFalse(size_ids & set(instance.attributes))

    def test_shape_counts(self):
        cfg = self.cfg._replace(min_shapes=0, max_shapes=0)
        data, images = synth.synth_generate(cfg)
        self.assertEqual((), data.instances)
        self.assertTrue(np.all(images[0] == synth.BACKGROUND))

    def test_bad_configs(self):
        with self.assertRaises(synth.SynthError):
            synth.synth_config(image_size=16)
        with self.assertRaises(synth.SynthError):
            synth.synth_config(min_shapes=3, max_shapes=2)
        with self.assertRaises(synth.SynthError):
            synth.synth_config(num_images=-1)

    def test_write_dataset(self):
        out = shared.create_dir()
        written = synth.write_dataset(self.cfg, out)
        self.assertEqual(os.path.abspath(out), written.root)
        loaded = dataset.load_annotations(
            os.path.join(out, synth.ANNOTATIONS_FILE_NAME))
        self.assertEqual(written.instances, loaded.instances)
        self.assertEqual(written.vocabulary, loaded.vocabulary)
        for record in loaded.images:
            pixels = dataset.load_image(loaded.image_path(record))
            self.assertEqual((3, 64, 64), pixels.shape)
        config = parser.parse_file(os.path.join(out, 'config.yaml'))
        self.assertEqual(synth.ANNOTATIONS_FILE_NAME, config.data.train)
        self.assertEqual(64, config.data.image_size)
