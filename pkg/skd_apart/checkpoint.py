# -*- coding: utf-8 -*-
"""
JSON checkpoints. Floats are written as their shortest round-trip repr
and every mapping in a fixed order, so save -> load -> save reproduces
the file byte for byte.
"""
import glob
import json
import logging
import os
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .exceptions import CheckpointError, ImproperlyConfigured
from .generator import GeneratorParams, GeneratorSource, OmegaStore
from .models import ArchConfig, ResidualNet, initialize_parameters

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 'skd-apart-checkpoint'

CHECKPOINT_VERSION = 1

CHECKPOINT_PATTERN = 'epoch_%04d.json'

# start error messages
NOT_A_CHECKPOINT_MSG = 'File %s is not a checkpoint (format %r).'

UNSUPPORTED_VERSION_MSG = 'Checkpoint %s has version %r; supported: %d.'

MISSING_KEY_MSG = 'Checkpoint %s lacks the key "%s".'

BAD_ARCH_MSG = 'Checkpoint %s has an invalid architecture: %s'

PARAMETER_MISMATCH_MSG = \
    'Checkpoint %s does not match its architecture: parameter %s has ' \
    'shape %s, expected %s.'

PARAMETER_NAMES_MSG = \
    'Checkpoint %s does not match its architecture: parameters %s ' \
    'expected, %s found.'

ARCH_MISMATCH_MSG = \
    'Checkpoint %s was written for a different architecture than %s.'

EPOCH_ORDER_MSG = 'Checkpoints must have ascending epochs; %s follows %s.'
# end error messages


@dataclass
class Checkpoint(object):
    """Model parameters plus the generator state of one epoch."""
    arch: ArchConfig
    epoch: int
    seed: int
    params: OrderedDict
    regime: str = None
    generator: GeneratorParams = None
    omega: OmegaStore = None
    layerwise: bool = True
    use_init: bool = True

    def model(self):
        return ResidualNet(self.arch, self.params)

    def generator_source(self, clamp_inputs=False):
        if self.generator is None:
            return None
        return GeneratorSource(self.generator, self.omega, self.layerwise,
                               self.use_init, clamp_inputs)

    def to_dict(self):
        return OrderedDict([
            ('format', CHECKPOINT_FORMAT),
            ('version', CHECKPOINT_VERSION),
            ('arch', self.arch.to_dict()),
            ('epoch', self.epoch),
            ('seed', self.seed),
            ('regime', self.regime),
            ('layerwise', self.layerwise),
            ('use_init', self.use_init),
            ('theta', [[name, list(value.shape), value.ravel().tolist()]
                       for name, value in self.params.items()]),
            ('generator', None if self.generator is None
             else self.generator.to_dict()),
            ('omega', None if self.omega is None else self.omega.to_dict()),
        ])


def checkpoint_path(directory, epoch):
    return os.path.join(directory, CHECKPOINT_PATTERN % epoch)


def list_checkpoints(directory):
    return sorted(glob.glob(os.path.join(directory, 'epoch_*.json')))


def dumps(checkpoint):
    return json.dumps(checkpoint.to_dict(), separators=(',', ':')) + '\n'


def save_checkpoint(path, checkpoint):
    """Writes through a temporary file so readers never see half a file."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    temporary = path + '.tmp'
    with open(temporary, 'w') as handle:
        handle.write(dumps(checkpoint))
    os.replace(temporary, path)
    logger.info('checkpoint written: %s', path)
    return path


def _require(document, key, path):
    if key not in document:
        raise CheckpointError(MISSING_KEY_MSG % (path, key))
    return document[key]


def loads(text, path='<string>'):
    try:
        document = json.loads(text)
    except ValueError as error:
        raise CheckpointError(NOT_A_CHECKPOINT_MSG % (path, str(error)))
    if not isinstance(document, dict) or \
            document.get('format') != CHECKPOINT_FORMAT:
        raise CheckpointError(NOT_A_CHECKPOINT_MSG % (
            path, document.get('format') if isinstance(document, dict)
            else None))
    if document.get('version') != CHECKPOINT_VERSION:
        raise CheckpointError(UNSUPPORTED_VERSION_MSG % (
            path, document.get('version'), CHECKPOINT_VERSION))

    try:
        arch = ArchConfig.from_dict(_require(document, 'arch', path))
    except (ImproperlyConfigured, TypeError) as error:
        raise CheckpointError(BAD_ARCH_MSG % (path, error))

    expected = initialize_parameters(arch)
    params = OrderedDict()
    for name, shape, values in _require(document, 'theta', path):
        if name not in expected or tuple(shape) != expected[name].shape:
            raise CheckpointError(PARAMETER_MISMATCH_MSG % (
                path, name, tuple(shape),
                expected[name].shape if name in expected else None))
        params[name] = np.array(values, dtype=np.float64).reshape(shape)
    if list(params) != list(expected):
        raise CheckpointError(PARAMETER_NAMES_MSG % (
            path, list(expected), list(params)))

    generator = _require(document, 'generator', path)
    omega = _require(document, 'omega', path)
    return Checkpoint(
        arch, _require(document, 'epoch', path),
        _require(document, 'seed', path), params,
        regime=document.get('regime'),
        generator=None if generator is None
        else GeneratorParams.from_dict(generator),
        omega=None if omega is None else OmegaStore.from_dict(omega),
        layerwise=document.get('layerwise', True),
        use_init=document.get('use_init', True))


def load_checkpoint(path):
    """
    :raises: ``CheckpointError`` for foreign files, unsupported versions
        or parameters that do not fit the recorded architecture
    """
    with open(path) as handle:
        return loads(handle.read(), path)


def load_series(paths, arch=None):
    """
    Loads checkpoints of one run.

    :param arch: ``ArchConfig`` every checkpoint must match; defaults to
        the first checkpoint's
    :raises: ``CheckpointError`` on architecture mismatch or epochs out of
        order
    """
    series = []
    for path in paths:
        checkpoint = load_checkpoint(path)
        arch = checkpoint.arch if arch is None else arch
        if checkpoint.arch != arch:
            raise CheckpointError(ARCH_MISMATCH_MSG % (path, arch))
        if series and checkpoint.epoch <= series[-1].epoch:
            raise CheckpointError(EPOCH_ORDER_MSG % (
                checkpoint.epoch, series[-1].epoch))
        series.append(checkpoint)
    return series
