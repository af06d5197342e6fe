# -*- coding: utf-8 -*-
import os
import shutil
import struct
import tempfile
from unittest import TestCase

import numpy as np
from mock import Mock

from skd_apart.data import (BatchAugmentation, Dataset, DatasetDescriptor,
                            IDX_IMAGES_MAGIC, LABEL_RANGE_MSG, _split,
                            load_dataset, min_max_scale, read_csv_table,
                            read_idx_images, write_idx)
from skd_apart.exceptions import DatasetFormatError, ImproperlyConfigured


class ScratchDirMixin(object):

    def setUp(self):
        self.directory = tempfile.mkdtemp(prefix='skd-apart-data-')
        self.addCleanup(shutil.rmtree, self.directory, True)

    def path(self, name):
        return os.path.join(self.directory, name)


class SyntheticTestCase(TestCase):

    def test_moons_are_deterministic(self):
        desc = DatasetDescriptor('synthetic-moons', n_samples=100)
        first_train, first_test = load_dataset(desc, seed=3)
        second_train, _ = load_dataset(desc, seed=3)
        np.testing.assert_array_equal(first_train.features,
                                      second_train.features)
        other_train, _ = load_dataset(desc, seed=4)
        self.assertFalse(np.array_equal(first_train.features,
                                        other_train.features))
        self.assertEqual((len(first_train), len(first_test)), (75, 25))

    def test_features_in_unit_box(self):
        for kind in ('synthetic-moons', 'synthetic-blobs'):
            train, test = load_dataset(DatasetDescriptor(kind), seed=0)
            for dataset in (train, test):
                self.assertGreaterEqual(dataset.features.min(), 0.0)
                self.assertLessEqual(dataset.features.max(), 1.0)
                self.assertTrue(set(dataset.labels) <=
                                set(range(dataset.num_classes)))

    def test_default_classes(self):
        self.assertEqual(DatasetDescriptor('synthetic-blobs').num_classes, 3)
        self.assertEqual(DatasetDescriptor('idx-images').num_classes, 10)
        self.assertTrue(DatasetDescriptor('idx-images').augment)
        self.assertFalse(DatasetDescriptor('synthetic-moons').augment)

    def test_unknown_kind(self):
        with self.assertRaises(ImproperlyConfigured):
            DatasetDescriptor('cifar-10')

    def test_constant_column(self):
        scaled = min_max_scale(np.array([[1.0, 5.0], [3.0, 5.0]]))
        np.testing.assert_array_equal(scaled, [[0.0, 0.0], [1.0, 0.0]])

    def test_reference_range(self):
        scaled = min_max_scale(np.array([[0.0], [5.0], [20.0]]),
                               np.array([[0.0], [10.0]]))
        np.testing.assert_array_equal(scaled, [[0.0], [0.5], [1.0]])

    def test_split_scales_with_the_training_range(self):
        features = np.array([[100.0], [-50.0], [0.0], [20.0], [40.0],
                             [60.0], [10.0], [30.0]])
        rng = Mock(permutation=lambda n: np.arange(n))
        train, test = _split(features, np.zeros(8), 0.25, 2, rng,
                             scale=True)
        np.testing.assert_array_equal(test.features, [[1.0], [0.0]])
        np.testing.assert_allclose(
            train.features[:, 0], [0.0, 1.0 / 3, 2.0 / 3, 1.0, 1.0 / 6, 0.5])


class IdxTestCase(ScratchDirMixin, TestCase):

    def write_split(self, images, labels, suffix=''):
        paths = {}
        for split in ('train', 'test'):
            paths[split + '_images'] = self.path(split + '-images' + suffix)
            paths[split + '_labels'] = self.path(split + '-labels' + suffix)
            write_idx(paths[split + '_images'], images)
            write_idx(paths[split + '_labels'], labels, labels=True)
        return paths

    def test_load(self):
        images = np.arange(5 * 4 * 4).reshape(5, 4, 4) % 256
        paths = self.write_split(images, [0, 1, 2, 3, 4])
        train, test = load_dataset(DatasetDescriptor('idx-images',
                                                     paths=paths))
        self.assertEqual(train.features.shape, (5, 1, 4, 4))
        self.assertEqual(train.image_shape, (1, 4, 4))
        self.assertTrue(train.is_image)
        np.testing.assert_allclose(train.features[1, 0],
                                   images[1] / 255.0)
        np.testing.assert_array_equal(test.labels, [0, 1, 2, 3, 4])

    def test_gzip_flatten_and_limit(self):
        images = np.full((6, 3, 3), 255)
        paths = self.write_split(images, [1] * 6, suffix='.gz')
        train, _ = load_dataset(DatasetDescriptor(
            'idx-images', paths=paths, flatten=True, limit=4))
        self.assertEqual(train.features.shape, (4, 9))
        self.assertEqual(train.features.max(), 1.0)

    def test_wrong_magic(self):
        path = self.path('labels-as-images')
        write_idx(path, [1, 2, 3], labels=True)
        with self.assertRaises(DatasetFormatError) as cm:
            read_idx_images(path)
        self.assertIn('0x%08x' % IDX_IMAGES_MAGIC, str(cm.exception))
        self.assertIn('offset 0', str(cm.exception))

    def test_truncated(self):
        path = self.path('short')
        with open(path, 'wb') as handle:
            handle.write(struct.pack('>IIII', IDX_IMAGES_MAGIC, 2, 4, 4))
            handle.write(b'\x00' * 10)
        with self.assertRaises(DatasetFormatError):
            read_idx_images(path)

    def test_count_mismatch(self):
        paths = self.write_split(np.zeros((3, 2, 2)), [0, 1])
        with self.assertRaises(DatasetFormatError):
            load_dataset(DatasetDescriptor('idx-images', paths=paths))

    def test_label_out_of_range(self):
        paths = self.write_split(np.zeros((3, 2, 2)), [0, 12, 1])
        with self.assertRaises(DatasetFormatError) as cm:
            load_dataset(DatasetDescriptor('idx-images', paths=paths))
        self.assertEqual(str(cm.exception), LABEL_RANGE_MSG % (12, 1, 10))

    def test_missing_path(self):
        with self.assertRaises(ImproperlyConfigured):
            load_dataset(DatasetDescriptor('idx-images', paths={}))


class CsvTestCase(ScratchDirMixin, TestCase):

    def write(self, text):
        path = self.path('table.csv')
        with open(path, 'w') as handle:
            handle.write(text)
        return path

    def test_table(self):
        path = self.write('a,label,b\n1,0,2\n3,1,4\n5,1,6\n7,0,8\n')
        features, labels, num_classes = read_csv_table(path)
        np.testing.assert_array_equal(features[0], [1.0, 2.0])
        np.testing.assert_array_equal(labels, [0, 1, 1, 0])
        self.assertEqual(num_classes, 2)
        train, test = load_dataset(DatasetDescriptor(
            'csv-table', paths={'table': path}))
        self.assertEqual(len(train) + len(test), 4)

    def test_scaling_is_fitted_on_the_training_split(self):
        # the label identifies the raw value of a row
        raw = [0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 100.0]
        path = self.write('a,label\n' + ''.join(
            '%s,%d\n' % (value, row) for row, value in enumerate(raw)))
        train, test = load_dataset(DatasetDescriptor(
            'csv-table', paths={'table': path}), seed=2)
        train_raw = np.array([raw[label] for label in train.labels])
        low, span = train_raw.min(), train_raw.max() - train_raw.min()
        np.testing.assert_allclose(train.features[:, 0],
                                   (train_raw - low) / span)
        for features, label in zip(test.features, test.labels):
            self.assertAlmostEqual(
                features[0], min(max((raw[label] - low) / span, 0.0), 1.0))

    def test_header_without_label(self):
        with self.assertRaises(DatasetFormatError):
            read_csv_table(self.write('a,b\n1,2\n'))

    def test_bad_row(self):
        with self.assertRaises(DatasetFormatError) as cm:
            read_csv_table(self.write('a,label\n1,0\nx,1\n'))
        self.assertIn('row 1', str(cm.exception))

    def test_label_range(self):
        with self.assertRaises(DatasetFormatError):
            read_csv_table(self.write('a,label\n1,0\n2,3\n'), num_classes=2)


class DatasetTestCase(TestCase):

    def setUp(self):
        self.dataset = Dataset(np.arange(20.0).reshape(10, 2),
                               np.arange(10) % 2, 2)

    def test_batches_cover_every_example(self):
        indices = np.concatenate([idx for _, _, idx in
                                  self.dataset.batches(3, seed=[0, 1])])
        self.assertEqual(sorted(indices), list(range(10)))
        again = np.concatenate([idx for _, _, idx in
                                self.dataset.batches(3, seed=[0, 1])])
        np.testing.assert_array_equal(indices, again)

    def test_unshuffled(self):
        batches = list(self.dataset.batches(4))
        self.assertEqual([len(y) for _, y, _ in batches], [4, 4, 2])
        np.testing.assert_array_equal(batches[0][2], [0, 1, 2, 3])

    def test_subset_keeps_indices(self):
        subset = self.dataset.subset(4, seed=2)
        np.testing.assert_array_equal(
            subset.features, self.dataset.features[subset.indices])


class AugmentationTestCase(TestCase):

    def test_flip_twice_is_identity(self):
        images = np.arange(2 * 1 * 3 * 3, dtype=float).reshape(2, 1, 3, 3)
        augmentation = BatchAugmentation([True, False], [[0, 0], [0, 0]],
                                         (1, 3, 3))
        flipped = augmentation.apply(images)
        np.testing.assert_array_equal(flipped[0, 0, 0], [2.0, 1.0, 0.0])
        np.testing.assert_array_equal(flipped[1], images[1])
        np.testing.assert_array_equal(augmentation.apply(flipped), images)

    def test_shift_pads_with_zeros(self):
        image = np.arange(1.0, 10.0).reshape(1, 1, 3, 3)
        augmentation = BatchAugmentation([False], [[1, 0]], (1, 3, 3))
        shifted = augmentation.apply(image)
        np.testing.assert_array_equal(shifted[0, 0, :2], image[0, 0, 1:])
        np.testing.assert_array_equal(shifted[0, 0, 2], [0.0, 0.0, 0.0])

    def test_restore_keeps_uncovered_values(self):
        stored = np.random.default_rng(0).uniform(size=(4, 1, 5, 5))
        augmentation = BatchAugmentation.draw(
            4, (1, 5, 5), 2, np.random.default_rng(1))
        np.testing.assert_array_equal(
            augmentation.restore(augmentation.apply(stored), stored), stored)
