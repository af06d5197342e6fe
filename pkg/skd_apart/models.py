# -*- coding: utf-8 -*-
"""
Small pre-activation residual networks whose forward pass exposes every
perturbation site: the model input (site 1) and the input of each
residual block (sites 2..n). Block ``i`` computes ``x_i + CNNs(x_i +
delta_i)``; the skip path never sees the perturbation.
"""
import hashlib
import logging
from collections import OrderedDict
from dataclasses import dataclass, asdict, replace

import numpy as np

from .exceptions import ImproperlyConfigured, ShapeError, StaleTapsError
from .tensor import Graph, Tensor, as_tensor, forward_op

logger = logging.getLogger(__name__)

ARCHITECTURES = ('micro-preact', 'micro-conv')

DEFAULT_WIDTH = {'micro-preact': 32, 'micro-conv': 8}

DEFAULT_BLOCKS = {'micro-preact': 3, 'micro-conv': 2}

# start error messages
UNKNOWN_ARCHITECTURE_MSG = 'Unknown architecture "%s"; expected one of %s.'

INPUT_SHAPE_MSG = \
    'Architecture "%s" needs an input shape of %d dimensions but got %s.'

WIDTH_WITHOUT_STEM_MSG = \
    'Without a stem the block width (%d) must equal the input width (%d).'

INPUT_MISMATCH_MSG = 'Model expects inputs of shape %s but got %s.'

BLOCK_DELTA_SHAPE_MSG = \
    'Perturbation for block %d has shape %s but the block input has shape %s.'

BLOCK_DELTA_COUNT_MSG = 'Expected %d block perturbations but got %d.'

STALE_TAPS_MSG = 'Block taps belong to a graph that was reset since.'

TAPS_WITHOUT_BACKWARD_MSG = 'Block taps are read before backward() ran.'

FOREIGN_LOSS_MSG = 'Loss was not built from the tapped forward pass.'

FLAT_THETA_SIZE_MSG = 'Flat parameter vector has %d values, expected %d.'
# end error messages


@dataclass
class ArchConfig(object):
    """
    Architecture of a :class:`ResidualNet`.

    ``micro-preact`` uses dense residual blocks on flat inputs,
    ``micro-conv`` uses 3x3 convolution blocks on ``(C, H, W)`` inputs.
    ``width`` and ``num_blocks`` default per architecture.
    """
    arch: str
    input_shape: tuple
    num_classes: int
    width: int = None
    num_blocks: int = None
    stem: bool = True
    kernel_size: int = 3
    skip_connections: bool = True

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ImproperlyConfigured(UNKNOWN_ARCHITECTURE_MSG % (
                self.arch, ', '.join(ARCHITECTURES)))
        self.input_shape = tuple(int(d) for d in self.input_shape)
        dims = 1 if self.arch == 'micro-preact' else 3
        if len(self.input_shape) != dims:
            raise ImproperlyConfigured(INPUT_SHAPE_MSG % (
                self.arch, dims, self.input_shape))
        if self.width is None:
            self.width = DEFAULT_WIDTH[self.arch] if self.stem \
                else self.input_shape[0]
        if self.num_blocks is None:
            self.num_blocks = DEFAULT_BLOCKS[self.arch]
        if not self.stem and self.width != self.input_shape[0]:
            raise ImproperlyConfigured(WIDTH_WITHOUT_STEM_MSG % (
                self.width, self.input_shape[0]))

    @property
    def is_conv(self):
        return self.arch == 'micro-conv'

    def parameter_count(self):
        """Number of scalar parameters, from the layer sizes alone."""
        w, c = self.width, self.num_classes
        fan = self.kernel_size ** 2 if self.is_conv else 1
        count = 2 * w + w * c + c
        count += self.num_blocks * (4 * w + 2 * (w * w * fan + w))
        if self.stem:
            count += self.input_shape[0] * w * fan + w
        return count

    def to_dict(self):
        document = asdict(self)
        document['input_shape'] = list(self.input_shape)
        return document

    @classmethod
    def from_dict(cls, document):
        return cls(**document)


def initialize_parameters(config, seed=0):
    """
    He-normal weights, zero biases, unit scales and zero shifts for the
    per-channel affine layers that stand in for normalization.
    """
    rng = np.random.default_rng(seed)
    w, k = config.width, config.kernel_size
    params = OrderedDict()

    def layer(name, fan_in, fan_out, gain=2.0):
        if config.is_conv:
            shape = (fan_out, fan_in, k, k)
            std = np.sqrt(gain / (fan_in * k * k))
        else:
            shape = (fan_in, fan_out)
            std = np.sqrt(gain / fan_in)
        params[name + '.weight'] = rng.normal(0.0, std, size=shape)
        params[name + '.bias'] = np.zeros(fan_out)

    def affine(name):
        shape = (w, 1, 1) if config.is_conv else (w,)
        params[name + '.scale'] = np.ones(shape)
        params[name + '.shift'] = np.zeros(shape)

    if config.stem:
        layer('stem', config.input_shape[0], w)
    for index in range(1, config.num_blocks + 1):
        prefix = 'block%d' % index
        affine(prefix + '.norm1')
        layer(prefix + '.layer1', w, w)
        affine(prefix + '.norm2')
        layer(prefix + '.layer2', w, w)
    affine('head.norm')
    params['head.weight'] = rng.normal(
        0.0, np.sqrt(1.0 / w), size=(w, config.num_classes))
    params['head.bias'] = np.zeros(config.num_classes)
    return params


class BlockTaps(object):
    """
    Tensors seen at every perturbation site during one tapped forward
    pass: ``inputs[0]`` is the (perturbed) model input, ``inputs[i]`` the
    input ``x_i`` of residual block ``i``. After backward, ``grads`` holds
    the matching ``delta x_i`` and ``param_grads`` the parameter gradients.
    """

    def __init__(self, inputs, graph, params):
        self.inputs = inputs
        self.graph = graph
        self.params = params
        self.generation = graph.generation

    @property
    def shapes(self):
        return [t.shape for t in self.inputs]

    def _check_ready(self):
        if self.generation != self.graph.generation:
            raise StaleTapsError(STALE_TAPS_MSG)
        if not self.graph.has_run_backward:
            raise StaleTapsError(TAPS_WITHOUT_BACKWARD_MSG)

    @property
    def grads(self):
        self._check_ready()
        return [np.zeros(t.shape) if t.grad is None else t.grad
                for t in self.inputs]

    @property
    def param_grads(self):
        self._check_ready()
        return OrderedDict(
            (name, np.zeros(t.shape) if t.grad is None else t.grad)
            for name, t in self.params.items())


class ResidualNet(object):
    """
    Pre-activation residual network. ``params`` is an ordered mapping of
    parameter name to array; a flat view is available through
    :meth:`flat_theta`.
    """

    def __init__(self, config, params=None, seed=0):
        self.config = config
        if params is None:
            params = initialize_parameters(config, seed)
        self.params = OrderedDict(
            (name, np.asarray(value, dtype=np.float64))
            for name, value in params.items())

    @property
    def num_blocks(self):
        return self.config.num_blocks

    @property
    def num_sites(self):
        return self.config.num_blocks + 1

    @property
    def input_shape(self):
        return self.config.input_shape

    def copy(self):
        return ResidualNet(self.config, OrderedDict(
            (name, value.copy()) for name, value in self.params.items()))

    def flat_theta(self):
        return np.concatenate([p.ravel() for p in self.params.values()])

    def set_flat_theta(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        expected = sum(p.size for p in self.params.values())
        if flat.size != expected:
            raise ShapeError(FLAT_THETA_SIZE_MSG % (flat.size, expected))
        offset = 0
        for name, value in self.params.items():
            self.params[name] = flat[offset:offset + value.size].reshape(
                value.shape).copy()
            offset += value.size

    def theta_hash(self):
        return hashlib.sha256(self.flat_theta().tobytes()).hexdigest()

    def bind(self, graph):
        """Registers every parameter as a tracked leaf of ``graph``."""
        return OrderedDict((name, graph.variable(value, name=name))
                           for name, value in self.params.items())

    def unflatten(self, flat):
        """Splits a flat parameter tensor into named tensors with slices."""
        params, offset = OrderedDict(), 0
        for name, value in self.params.items():
            params[name] = forward_op('slice', (flat,), start=offset,
                                      stop=offset + value.size,
                                      shape=value.shape)
            offset += value.size
        return params

    def _constants(self):
        return OrderedDict((name, Tensor(value))
                           for name, value in self.params.items())

    def _layer(self, h, params, prefix):
        weight, bias = params[prefix + '.weight'], params[prefix + '.bias']
        if self.config.is_conv:
            return forward_op('conv2d', (h, weight, bias),
                              padding=self.config.kernel_size // 2)
        return h @ weight + bias

    def _affine_relu(self, h, params, prefix):
        shifted = h * params[prefix + '.scale'] + params[prefix + '.shift']
        return forward_op('relu', (shifted,))

    def _transform(self, index, z, params):
        prefix = 'block%d' % index
        h = self._affine_relu(z, params, prefix + '.norm1')
        h = self._layer(h, params, prefix + '.layer1')
        h = self._affine_relu(h, params, prefix + '.norm2')
        return self._layer(h, params, prefix + '.layer2')

    def _head(self, h, params):
        h = self._affine_relu(h, params, 'head.norm')
        if self.config.is_conv:
            h = forward_op('global_avg_pool', (h,))
        return h @ params['head.weight'] + params['head.bias']

    def forward(self, x_in, block_deltas=None, params=None):
        """
        :param x_in: model input, already carrying the input perturbation
        :param block_deltas: ``None`` or one entry per block, each ``None``
            or a tensor/array injected into that block's transform
        :param params: named parameter tensors (see :meth:`bind`); constant
            parameters are used when omitted
        :return: ``(logits, inputs)`` where ``inputs`` lists the tensor at
            every perturbation site
        """
        params = self._constants() if params is None else params
        x_in = as_tensor(x_in)
        if x_in.shape[1:] != self.input_shape:
            raise ShapeError(INPUT_MISMATCH_MSG % (
                ('N',) + self.input_shape, x_in.shape))
        if block_deltas is None:
            block_deltas = [None] * self.num_blocks
        elif len(block_deltas) != self.num_blocks:
            raise ShapeError(BLOCK_DELTA_COUNT_MSG % (
                self.num_blocks, len(block_deltas)))

        inputs = [x_in]
        h = self._layer(x_in, params, 'stem') if self.config.stem else x_in
        for index, delta in enumerate(block_deltas, 1):
            inputs.append(h)
            z = h
            if delta is not None:
                delta = as_tensor(delta)
                if delta.shape != h.shape:
                    raise ShapeError(BLOCK_DELTA_SHAPE_MSG % (
                        index, delta.shape, h.shape))
                z = h + delta
            out = self._transform(index, z, params)
            h = h + out if self.config.skip_connections else out
        return self._head(h, params), inputs

    def per_example_loss(self, x_in, labels, block_deltas=None, params=None):
        logits, inputs = self.forward(x_in, block_deltas, params)
        losses = forward_op('softmax_cross_entropy', (logits, labels))
        return losses, logits, inputs

    def loss_from_flat(self, flat, x, labels):
        """Mean loss as a function of a flat parameter tensor."""
        losses, _, _ = self.per_example_loss(x, labels,
                                             params=self.unflatten(flat))
        return forward_op('mean', (losses,))

    def predict(self, x, block_deltas=None):
        logits, _ = self.forward(x, block_deltas)
        return logits.data


class TensorObjective(object):
    """
    Adapts a tensor function ``fn(inputs, labels, params)`` returning
    per-example losses to the model interface used by attacks, the
    generator and the analysis instruments. It has a single perturbation
    site, the input.
    """

    num_blocks = 0
    num_sites = 1

    def __init__(self, fn, input_shape, params=None, name='objective'):
        self.fn = fn
        self.input_shape = tuple(input_shape)
        self.params = OrderedDict(
            (key, np.asarray(value, dtype=np.float64))
            for key, value in (params or {}).items())
        self.name = name

    def bind(self, graph):
        return OrderedDict((key, graph.variable(value, name=key))
                           for key, value in self.params.items())

    def per_example_loss(self, x_in, labels, block_deltas=None, params=None):
        if params is None:
            params = OrderedDict((key, Tensor(value))
                                 for key, value in self.params.items())
        x_in = as_tensor(x_in)
        losses = self.fn(x_in, labels, params)
        if losses.shape == ():
            losses = forward_op('reshape', (losses,), shape=(1,))
        return losses, None, [x_in]


def forward_tapped(net, x, deltas=None, graph=None):
    """
    Runs one tracked forward pass of ``net`` on ``x`` plus the optional
    perturbation set ``deltas``.

    :return: ``(logits, taps)``
    """
    graph = Graph() if graph is None else graph
    x = np.asarray(x, dtype=np.float64)
    block_deltas = None
    if deltas is not None:
        x = x + deltas.input_delta
        block_deltas = deltas.block_deltas
    x_in = graph.variable(x, name='input')
    params = net.bind(graph)
    logits, inputs = net.forward(x_in, block_deltas, params)
    return logits, BlockTaps(inputs, graph, params)


def block_input_grads(net, loss, taps):
    """
    Runs the single backward pass of a tapped forward.

    :return: ``(site_grads, param_grads)``: ``delta x_i`` for every
        perturbation site and ``delta theta`` by parameter name
    :raises: ``StaleTapsError`` when the graph was reset after the forward
    """
    if taps.generation != taps.graph.generation:
        raise StaleTapsError(STALE_TAPS_MSG)
    if loss.graph is not taps.graph:
        raise StaleTapsError(FOREIGN_LOSS_MSG)
    taps.graph.backward(loss)
    return taps.grads, taps.param_grads


def with_skip_connections(net, enabled):
    """Same parameters, residual additions switched on or off."""
    return ResidualNet(replace(net.config, skip_connections=enabled),
                       net.params)
