# -*- coding: utf-8 -*-
"""
Dataset ingestion. Every loader returns features scaled to [0, 1] and
integer labels in ``[0, num_classes)``; splits are deterministic in the
seed.

IDX files (optionally gzipped) are big-endian::

    [offset] [type]          [value]
    0000     32 bit integer  0x00000803 (2051) magic number, images
    0004     32 bit integer  number of images
    0008     32 bit integer  number of rows
    0012     32 bit integer  number of columns
    0016     unsigned byte   pixels, row-major

    0000     32 bit integer  0x00000801 (2049) magic number, labels
    0004     32 bit integer  number of labels
    0008     unsigned byte   labels
"""
import csv
import gzip
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DatasetFormatError, ImproperlyConfigured

logger = logging.getLogger(__name__)

DATASET_KINDS = ('synthetic-moons', 'synthetic-blobs', 'idx-images',
                 'csv-table')

IDX_IMAGES_MAGIC = 0x00000803

IDX_LABELS_MAGIC = 0x00000801

IDX_PATH_KEYS = ('train_images', 'train_labels', 'test_images',
                 'test_labels')

LABEL_COLUMN = 'label'

# start error messages
UNKNOWN_DATASET_MSG = 'Unknown dataset kind "%s"; expected one of %s.'

MISSING_PATH_MSG = 'Dataset kind "%s" needs the path "%s".'

IDX_MAGIC_MSG = \
    'IDX file %s: expected magic 0x%08x (%d) at offset 0 but found ' \
    '0x%08x (%d).'

IDX_TRUNCATED_MSG = \
    'IDX file %s is truncated: %d bytes expected from offset %d, %d found.'

IDX_COUNT_MISMATCH_MSG = \
    'IDX files hold %d images but %d labels.'

LABEL_RANGE_MSG = 'Label %r at row %d is outside [0, %d).'

CSV_HEADER_MSG = \
    'CSV file %s: header must name the feature columns and one "%s" ' \
    'column, got %r.'

CSV_ROW_MSG = 'CSV file %s: row %d cannot be parsed: %s.'

EMPTY_DATASET_MSG = 'Dataset "%s" produced no examples.'
# end error messages


@dataclass
class DatasetDescriptor(object):
    """
    Where the data comes from and how it is split.

    ``paths`` holds ``train_images``/``train_labels``/``test_images``/
    ``test_labels`` for IDX data and ``table`` for CSV data.
    """
    kind: str
    n_samples: int = 400
    n_features: int = 2
    noise: float = 0.1
    cluster_std: float = 1.0
    num_classes: int = None
    paths: dict = field(default_factory=dict)
    test_fraction: float = 0.25
    flatten: bool = False
    augment: bool = None
    crop_padding: int = 2
    limit: int = None

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ImproperlyConfigured(UNKNOWN_DATASET_MSG % (
                self.kind, ', '.join(DATASET_KINDS)))
        if self.num_classes is None:
            self.num_classes = {'synthetic-moons': 2, 'synthetic-blobs': 3,
                                'idx-images': 10}.get(self.kind)
        if self.augment is None:
            self.augment = self.kind == 'idx-images'

    @property
    def is_image(self):
        return self.kind == 'idx-images'


class Dataset(object):
    """
    Features, labels and the stable dataset index of every example (the
    key of per-example generator state).
    """

    def __init__(self, features, labels, num_classes, indices=None,
                 image_shape=None):
        self.features = np.asarray(features, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.num_classes = num_classes
        self.indices = np.arange(len(self.labels)) if indices is None \
            else np.asarray(indices, dtype=np.int64)
        self.image_shape = image_shape

    def __len__(self):
        return len(self.labels)

    @property
    def input_shape(self):
        return self.features.shape[1:]

    @property
    def is_image(self):
        return self.image_shape is not None

    def batches(self, batch_size, seed=None):
        """
        Yields ``(x, y, idx)``; ``seed`` shuffles the order with a
        Fisher-Yates permutation.
        """
        order = np.arange(len(self))
        if seed is not None:
            order = np.random.default_rng(seed).permutation(len(self))
        for start in range(0, len(self), batch_size):
            rows = order[start:start + batch_size]
            yield self.features[rows], self.labels[rows], self.indices[rows]

    def subset(self, size, seed=0):
        """A fixed random subset of at most ``size`` examples."""
        if size is None or size >= len(self):
            return self
        rng = np.random.default_rng(seed)
        rows = np.sort(rng.choice(len(self), size=size, replace=False))
        return Dataset(self.features[rows], self.labels[rows],
                       self.num_classes, self.indices[rows], self.image_shape)


def _shift_windows(dy, dx, height, width):
    """Source and target slices of ``out[i, j] = img[i + dy, j + dx]``."""
    source = (slice(max(0, dy), height + min(0, dy)),
              slice(max(0, dx), width + min(0, dx)))
    target = (slice(max(0, -dy), height - max(0, dy)),
              slice(max(0, -dx), width - max(0, dx)))
    return source, target


class BatchAugmentation(object):
    """
    Random horizontal flips and pad-and-crop shifts drawn once per batch.
    The same transform applies to the inputs and to the per-example
    generator state, and :meth:`restore` maps a transformed array back to
    stored coordinates.
    """

    def __init__(self, flips, shifts, image_shape):
        self.flips = np.asarray(flips, dtype=bool)
        self.shifts = np.asarray(shifts, dtype=np.int64)
        self.image_shape = tuple(image_shape)

    @classmethod
    def draw(cls, batch_size, image_shape, padding, rng):
        flips = rng.random(batch_size) < 0.5
        shifts = rng.integers(-padding, padding + 1, size=(batch_size, 2))
        return cls(flips, shifts, image_shape)

    def apply(self, batch):
        flat_shape = batch.shape
        images = batch.reshape((-1,) + self.image_shape)
        out = np.zeros_like(images)
        height, width = self.image_shape[-2:]
        for n, image in enumerate(images):
            if self.flips[n]:
                image = image[..., ::-1]
            source, target = _shift_windows(self.shifts[n, 0],
                                            self.shifts[n, 1], height, width)
            out[n][(Ellipsis,) + target] = image[(Ellipsis,) + source]
        return out.reshape(flat_shape)

    def restore(self, view, stored):
        """
        Writes the transformed ``view`` back into a copy of ``stored``;
        positions the crop did not cover keep their stored values.
        """
        flat_shape = stored.shape
        result = stored.reshape((-1,) + self.image_shape).copy()
        views = view.reshape((-1,) + self.image_shape)
        height, width = self.image_shape[-2:]
        for n in range(len(result)):
            target_image = result[n][..., ::-1] if self.flips[n] \
                else result[n]
            source, target = _shift_windows(self.shifts[n, 0],
                                            self.shifts[n, 1], height, width)
            target_image[(Ellipsis,) + source] = \
                views[n][(Ellipsis,) + target]
        return result.reshape(flat_shape)


def min_max_scale(features, reference=None):
    """
    Scales every column to [0, 1] using the range of ``reference``
    (``features`` itself by default). Constant columns become 0 and values
    outside the reference range are clipped.
    """
    reference = features if reference is None else reference
    low = reference.min(axis=0)
    span = reference.max(axis=0) - low
    span = np.where(span == 0, 1.0, span)
    return np.clip((features - low) / span, 0.0, 1.0)


def make_moons(n_samples, noise, rng):
    outer = n_samples // 2
    inner = n_samples - outer
    t_outer = np.linspace(0, np.pi, outer)
    t_inner = np.linspace(0, np.pi, inner)
    features = np.vstack([
        np.column_stack([np.cos(t_outer), np.sin(t_outer)]),
        np.column_stack([1 - np.cos(t_inner), 1 - np.sin(t_inner) - 0.5]),
    ])
    labels = np.concatenate([np.zeros(outer), np.ones(inner)])
    features = features + rng.normal(0.0, noise, size=features.shape)
    return features, labels


def make_blobs(n_samples, n_features, num_classes, cluster_std, rng):
    centers = rng.uniform(-10.0, 10.0, size=(num_classes, n_features))
    labels = np.arange(n_samples) % num_classes
    features = centers[labels] + rng.normal(
        0.0, cluster_std, size=(n_samples, n_features))
    return features, labels


def _split(features, labels, test_fraction, num_classes, rng,
           image_shape=None, scale=False):
    """
    Seeded shuffle and split; ``scale`` fits the min-max range on the
    training part and applies it to both parts.
    """
    order = rng.permutation(len(labels))
    features, labels = features[order], labels[order]
    n_test = int(round(len(labels) * test_fraction))
    train_features, test_features = features[n_test:], features[:n_test]
    if scale and len(train_features):
        test_features = min_max_scale(test_features, train_features)
        train_features = min_max_scale(train_features)
    test = Dataset(test_features, labels[:n_test], num_classes,
                   image_shape=image_shape)
    train = Dataset(train_features, labels[n_test:], num_classes,
                    image_shape=image_shape)
    return train, test


def _read_bytes(path):
    opener = gzip.open if str(path).endswith('.gz') else open
    with opener(path, 'rb') as handle:
        return handle.read()


def _check_length(path, payload, offset, needed):
    if len(payload) - offset < needed:
        raise DatasetFormatError(IDX_TRUNCATED_MSG % (
            path, needed, offset, len(payload) - offset))


def read_idx_images(path):
    """:return: ``uint8`` array of shape ``(count, rows, cols)``"""
    payload = _read_bytes(path)
    _check_length(path, payload, 0, 16)
    magic, count, rows, cols = struct.unpack('>IIII', payload[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DatasetFormatError(IDX_MAGIC_MSG % (
            path, IDX_IMAGES_MAGIC, IDX_IMAGES_MAGIC, magic, magic))
    _check_length(path, payload, 16, count * rows * cols)
    pixels = np.frombuffer(payload, dtype=np.uint8, count=count * rows * cols,
                           offset=16)
    return pixels.reshape(count, rows, cols)


def read_idx_labels(path):
    payload = _read_bytes(path)
    _check_length(path, payload, 0, 8)
    magic, count = struct.unpack('>II', payload[:8])
    if magic != IDX_LABELS_MAGIC:
        raise DatasetFormatError(IDX_MAGIC_MSG % (
            path, IDX_LABELS_MAGIC, IDX_LABELS_MAGIC, magic, magic))
    _check_length(path, payload, 8, count)
    return np.frombuffer(payload, dtype=np.uint8, count=count, offset=8)


def write_idx(path, array, labels=False):
    """Writes ``uint8`` images ``(count, rows, cols)`` or labels."""
    array = np.asarray(array, dtype=np.uint8)
    if labels:
        header = struct.pack('>II', IDX_LABELS_MAGIC, len(array))
    else:
        header = struct.pack('>IIII', IDX_IMAGES_MAGIC, *array.shape)
    opener = gzip.open if str(path).endswith('.gz') else open
    with opener(path, 'wb') as handle:
        handle.write(header + array.tobytes())


def check_labels(labels, num_classes):
    bad = np.flatnonzero((labels < 0) | (labels >= num_classes))
    if bad.size:
        row = int(bad[0])
        raise DatasetFormatError(LABEL_RANGE_MSG % (
            labels[row].item(), row, num_classes))


def _load_idx_split(desc, images_key, labels_key):
    for key in (images_key, labels_key):
        if key not in desc.paths:
            raise ImproperlyConfigured(MISSING_PATH_MSG % (desc.kind, key))
    images = read_idx_images(desc.paths[images_key])
    labels = read_idx_labels(desc.paths[labels_key]).astype(np.int64)
    if len(images) != len(labels):
        raise DatasetFormatError(IDX_COUNT_MISMATCH_MSG % (
            len(images), len(labels)))
    check_labels(labels, desc.num_classes)
    if desc.limit is not None:
        images, labels = images[:desc.limit], labels[:desc.limit]
    image_shape = (1,) + images.shape[1:]
    features = images.astype(np.float64).reshape((-1,) + image_shape) / 255.0
    if desc.flatten:
        features = features.reshape(len(features), -1)
    return Dataset(features, labels, desc.num_classes,
                   image_shape=image_shape)


def read_csv_table(path, num_classes=None):
    with open(path, newline='') as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if not header or header.count(LABEL_COLUMN) != 1 or len(header) < 2 \
                or len(set(header)) != len(header):
            raise DatasetFormatError(CSV_HEADER_MSG % (
                path, LABEL_COLUMN, header))
        label_at = header.index(LABEL_COLUMN)
        features, labels = [], []
        for row_index, row in enumerate(reader):
            try:
                if len(row) != len(header):
                    raise ValueError('expected %d fields, got %d' % (
                        len(header), len(row)))
                values = [float(value) for value in row]
                label = values.pop(label_at)
                if label != int(label):
                    raise ValueError('label %r is not an integer' % label)
            except ValueError as error:
                raise DatasetFormatError(CSV_ROW_MSG % (
                    path, row_index, error))
            features.append(values)
            labels.append(int(label))
    labels = np.asarray(labels, dtype=np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 0
    check_labels(labels, num_classes)
    return np.asarray(features, dtype=np.float64), labels, num_classes


def load_dataset(desc, seed=0):
    """
    :param desc: ``DatasetDescriptor``
    :param seed: seed of synthetic generation and of the train/test split
    :return: ``(train, test)`` datasets
    :raises: ``DatasetFormatError`` for corrupt files or labels out of
        range, ``ImproperlyConfigured`` for missing paths
    """
    rng = np.random.default_rng(seed)
    if desc.kind == 'synthetic-moons':
        features, labels = make_moons(desc.n_samples, desc.noise, rng)
        train, test = _split(features, labels, desc.test_fraction, 2, rng,
                             scale=True)
    elif desc.kind == 'synthetic-blobs':
        features, labels = make_blobs(desc.n_samples, desc.n_features,
                                      desc.num_classes, desc.cluster_std, rng)
        train, test = _split(features, labels, desc.test_fraction,
                             desc.num_classes, rng, scale=True)
    elif desc.kind == 'idx-images':
        train = _load_idx_split(desc, 'train_images', 'train_labels')
        test = _load_idx_split(desc, 'test_images', 'test_labels')
    else:
        if 'table' not in desc.paths:
            raise ImproperlyConfigured(MISSING_PATH_MSG % (desc.kind, 'table'))
        features, labels, num_classes = read_csv_table(
            desc.paths['table'], desc.num_classes)
        train, test = _split(features, labels, desc.test_fraction,
                             num_classes, rng, scale=True)

    if not len(train):
        raise DatasetFormatError(EMPTY_DATASET_MSG % desc.kind)
    logger.info('loaded %s: %d train / %d test examples, input shape %s',
                desc.kind, len(train), len(test), train.input_shape)
    return train, test
