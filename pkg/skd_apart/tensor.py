# -*- coding: utf-8 -*-
"""
Dense float64 tensors with reverse-mode automatic differentiation.

Every operation goes through :func:`forward_op`. When at least one input
is tracked (``requires_grad``) and the kind is differentiable, the
operation is recorded on the inputs' :class:`Graph` together with a
closure over the activations its backward rule needs. Tensors without a
graph are plain constants: operations on them compute values only.
"""
import itertools
import logging
from collections import Counter, namedtuple

import numpy as np

from .exceptions import ShapeError, UnknownOperationError, BackwardError, \
    NonFiniteError, NonDifferentiablePointError

logger = logging.getLogger(__name__)

# start error messages
SHAPE_MISMATCH_MSG = 'Operation "%s" cannot combine shapes %s.'

ARITY_MSG = 'Operation "%s" takes %s input tensors but got %d.'

UNKNOWN_OPERATION_MSG = 'Unknown operation kind "%s". Known kinds: %s.'

FOREIGN_TENSOR_MSG = 'Operation "%s" mixes tensors from different graphs.'

STALE_TENSOR_MSG = \
    'Operation "%s" got a tensor created before the last graph reset.'

BACKWARD_TWICE_MSG = \
    'backward() was already run on this graph; call reset() before reuse.'

NON_SCALAR_LOSS_MSG = 'backward() needs a scalar loss but got shape %s.'

LOSS_NOT_TRACKED_MSG = \
    'Loss does not belong to this graph or depends on no tracked tensor.'

BAD_LABELS_MSG = \
    'softmax_cross_entropy labels must be integers in [0, %d) with shape ' \
    '%s but got shape %s.'

NON_FINITE_EVALUATION_MSG = \
    'Function value is not finite at coordinate %d: %r.'

NON_DIFFERENTIABLE_MSG = \
    'One-sided differences disagree at coordinate %d (%r vs %r); the ' \
    'function is not differentiable there.'
# end error messages

# one-sided slopes may differ by about h * f''; more than this is a kink
KINK_RATIO = 1e3

Node = namedtuple('Node', ['kind', 'input_ids', 'output_id', 'inputs',
                           'backward'])

OpKind = namedtuple('OpKind', ['arity', 'forward', 'check', 'differentiable'])


class Tensor(object):
    """
    n-dimensional float64 array taking part in at most one computation
    graph.

    :param data: array-like values
    :param graph: owning :class:`Graph` or ``None`` for constants
    :param requires_grad: whether gradients flow back to this tensor
    :param name: optional label used in diagnostics
    """

    # ndarray <op> Tensor defers to the Tensor operators
    __array_ufunc__ = None

    def __init__(self, data, graph=None, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.graph = graph
        self.requires_grad = requires_grad
        self.name = name
        self.grad = None
        if graph is not None:
            self.node_id = graph._register(self)
            self.generation = graph.generation
        else:
            self.node_id = None
            self.generation = None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def __repr__(self):
        return 'Tensor(shape=%s, node_id=%s, requires_grad=%s)' % (
            self.shape, self.node_id, self.requires_grad)

    def __add__(self, other):
        return forward_op('add', (self, other))

    def __radd__(self, other):
        return forward_op('add', (other, self))

    def __sub__(self, other):
        return forward_op('sub', (self, other))

    def __rsub__(self, other):
        return forward_op('sub', (other, self))

    def __mul__(self, other):
        return forward_op('mul', (self, other))

    def __rmul__(self, other):
        return forward_op('mul', (other, self))

    def __matmul__(self, other):
        return forward_op('matmul', (self, other))

    def __neg__(self):
        return forward_op('scalar_mul', (-1.0, self))


def as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


class Graph(object):
    """
    Ordered record of the differentiable operations of one computation.
    Nodes are appended as operations execute, so the list is always in
    topological order. A graph is meant to be used from one thread.
    """

    def __init__(self):
        self.nodes = []
        self.op_counts = Counter()
        self.backward_calls = 0
        self.generation = 0
        self._ids = itertools.count()
        self._tensors = {}
        self._backward_done = False

    def _register(self, tensor):
        node_id = next(self._ids)
        self._tensors[node_id] = tensor
        return node_id

    def variable(self, data, name=None):
        return Tensor(data, graph=self, requires_grad=True, name=name)

    def constant(self, data, name=None):
        return Tensor(data, graph=self, requires_grad=False, name=name)

    def record(self, kind, inputs, output, backward):
        self.nodes.append(Node(kind, tuple(t.node_id for t in inputs),
                               output.node_id, tuple(inputs), backward))

    @property
    def has_run_backward(self):
        return self._backward_done

    def backward(self, loss):
        """
        Propagates ``d loss / d node`` through every recorded node once, in
        reverse order. Gradients of nodes with fan-out are summed.

        :param loss: scalar tensor of this graph
        :return: dict mapping node-id to gradient array; the same arrays
            are stored on the tensors as ``grad``
        :raises: ``BackwardError`` on a second call without ``reset`` or on
            a non-scalar or untracked loss
        """
        if self._backward_done:
            raise BackwardError(BACKWARD_TWICE_MSG)
        if loss.graph is not self or loss.generation != self.generation \
                or not loss.requires_grad:
            raise BackwardError(LOSS_NOT_TRACKED_MSG)
        if loss.shape != ():
            raise BackwardError(NON_SCALAR_LOSS_MSG % (loss.shape,))

        self._backward_done = True
        self.backward_calls += 1

        grads = {loss.node_id: np.ones((), dtype=np.float64)}
        for node in reversed(self.nodes):
            out_grad = grads.get(node.output_id)
            if out_grad is None:
                continue
            for tensor, grad in zip(node.inputs, node.backward(out_grad)):
                if grad is None or not tensor.requires_grad:
                    continue
                if tensor.node_id in grads:
                    grads[tensor.node_id] = grads[tensor.node_id] + grad
                else:
                    grads[tensor.node_id] = grad

        for node_id, grad in grads.items():
            self._tensors[node_id].grad = np.asarray(grad, dtype=np.float64)
        return grads

    def reset(self):
        self.nodes = []
        self.op_counts = Counter()
        self._tensors = {}
        self._backward_done = False
        self.generation += 1


def _common_graph(kind, tensors):
    graph = None
    for tensor in tensors:
        if tensor.graph is None:
            continue
        if graph is None:
            graph = tensor.graph
        elif tensor.graph is not graph:
            raise ShapeError(FOREIGN_TENSOR_MSG % kind)
        if tensor.generation != tensor.graph.generation:
            raise ShapeError(STALE_TENSOR_MSG % kind)
    return graph


def _shapes(arrays):
    return ' and '.join(str(a.shape) for a in arrays)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# shape rules

def _check_broadcast(kind, arrays, attrs):
    try:
        np.broadcast_shapes(*(a.shape for a in arrays))
    except ValueError:
        raise ShapeError(SHAPE_MISMATCH_MSG % (kind, _shapes(arrays)))


def _check_matmul(kind, arrays, attrs):
    a, b = arrays
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(SHAPE_MISMATCH_MSG % (kind, _shapes(arrays)))


def _check_conv2d(kind, arrays, attrs):
    x, w = arrays[0], arrays[1]
    padding = attrs.get('padding', 0)
    ok = x.ndim == 4 and w.ndim == 4 and w.shape[2] == w.shape[3] \
        and x.shape[1] == w.shape[1] and padding >= 0 \
        and x.shape[2] + 2 * padding >= w.shape[2] \
        and x.shape[3] + 2 * padding >= w.shape[3]
    if len(arrays) == 3:
        ok = ok and arrays[2].shape == (w.shape[0],)
    if not ok:
        raise ShapeError(SHAPE_MISMATCH_MSG % (kind, _shapes(arrays)))


def _check_cross_entropy(kind, arrays, attrs):
    logits, labels = arrays
    if logits.ndim != 2:
        raise ShapeError(SHAPE_MISMATCH_MSG % (kind, _shapes(arrays)))
    classes = logits.shape[1]
    valid = labels.shape == (logits.shape[0],) \
        and np.all(labels == np.floor(labels)) \
        and np.all((labels >= 0) & (labels < classes))
    if not valid:
        raise ShapeError(BAD_LABELS_MSG % (
            classes, (logits.shape[0],), labels.shape))


def _check_scalar_mul(kind, arrays, attrs):
    if arrays[0].shape != ():
        raise ShapeError(SHAPE_MISMATCH_MSG % (kind, _shapes(arrays)))


def _check_clamp(kind, arrays, attrs):
    if attrs['lo'] > attrs['hi']:
        raise ShapeError(SHAPE_MISMATCH_MSG % (
            kind, 'with bounds lo=%r > hi=%r' % (attrs['lo'], attrs['hi'])))


def _check_reshape(kind, arrays, attrs):
    if int(np.prod(attrs['shape'])) != arrays[0].size:
        raise ShapeError(SHAPE_MISMATCH_MSG % (
            kind, '%s into %s' % (arrays[0].shape, tuple(attrs['shape']))))


def _check_slice(kind, arrays, attrs):
    a = arrays[0]
    start, stop = attrs['start'], attrs['stop']
    shape = attrs.get('shape') or (stop - start,)
    if a.ndim != 1 or not 0 <= start <= stop <= a.size \
            or int(np.prod(shape)) != stop - start:
        raise ShapeError(SHAPE_MISMATCH_MSG % (
            kind, '%s[%d:%d] into %s' % (a.shape, start, stop, shape)))


def _check_pool(kind, arrays, attrs):
    if arrays[0].ndim != 4:
        raise ShapeError(SHAPE_MISMATCH_MSG % (kind, _shapes(arrays)))


def _no_check(kind, arrays, attrs):
    pass


# forward rules; each returns (value, backward) where backward maps the
# output gradient to one gradient (or None) per input

def _add(a, b):
    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return a + b, backward


def _sub(a, b):
    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return a - b, backward


def _mul(a, b):
    def backward(g):
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)
    return a * b, backward


def _matmul(a, b):
    def backward(g):
        return g @ b.T, a.T @ g
    return a @ b, backward


def _conv2d(x, w, b=None, padding=0):
    k = w.shape[2]
    padded = np.pad(x, ((0, 0), (0, 0), (padding, padding),
                        (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(
        padded, (k, k), axis=(2, 3))
    out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3]))
    out = out.transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b[None, :, None, None]

    def backward(g):
        grad_w = np.tensordot(windows, g, axes=([0, 2, 3], [0, 2, 3]))
        grad_w = grad_w.transpose(3, 0, 1, 2)
        grad_padded = np.zeros_like(padded)
        out_h, out_w = g.shape[2], g.shape[3]
        for i in range(k):
            for j in range(k):
                contribution = np.tensordot(g, w[:, :, i, j], axes=([1], [0]))
                grad_padded[:, :, i:i + out_h, j:j + out_w] += \
                    contribution.transpose(0, 3, 1, 2)
        grad_x = grad_padded[:, :, padding:padding + x.shape[2],
                             padding:padding + x.shape[3]]
        if b is None:
            return grad_x, grad_w
        return grad_x, grad_w, g.sum(axis=(0, 2, 3))
    return out, backward


def _relu(a):
    def backward(g):
        return (g * (a > 0),)
    return np.maximum(a, 0.0), backward


def _mean(a):
    def backward(g):
        return (np.full(a.shape, g / a.size),)
    return np.asarray(a.mean()), backward


def _softmax_cross_entropy(logits, labels):
    targets = labels.astype(np.int64)
    rows = np.arange(logits.shape[0])
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    losses = -log_probs[rows, targets]

    def backward(g):
        probs = np.exp(log_probs)
        probs[rows, targets] -= 1.0
        return probs * g[:, None], None
    return losses, backward


def _sign(a):
    def backward(g):
        return (np.zeros(a.shape),)
    return np.sign(a), backward


def _clamp(a, lo, hi):
    def backward(g):
        return (g * ((a > lo) & (a < hi)),)
    return np.clip(a, lo, hi), backward


def _scalar_mul(s, t):
    def backward(g):
        return np.asarray(np.sum(g * t)), g * s
    return s * t, backward


def _sum_of_squares(a):
    def backward(g):
        return (2.0 * a * g,)
    return np.asarray(np.sum(a * a)), backward


def _sum(a, axis=None):
    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)
    return np.asarray(np.sum(a, axis=axis)), backward


def _reshape(a, shape):
    def backward(g):
        return (g.reshape(a.shape),)
    return a.reshape(shape), backward


def _slice(a, start, stop, shape=None):
    def backward(g):
        grad = np.zeros(a.shape)
        grad[start:stop] = g.ravel()
        return (grad,)
    return a[start:stop].reshape(shape or (stop - start,)), backward


def _global_avg_pool(a):
    def backward(g):
        area = a.shape[2] * a.shape[3]
        return (np.broadcast_to(g[:, :, None, None] / area, a.shape).copy(),)
    return a.mean(axis=(2, 3)), backward


OPERATIONS = {
    'add': OpKind((2,), _add, _check_broadcast, True),
    'sub': OpKind((2,), _sub, _check_broadcast, True),
    'mul': OpKind((2,), _mul, _check_broadcast, True),
    'matmul': OpKind((2,), _matmul, _check_matmul, True),
    'conv2d': OpKind((2, 3), _conv2d, _check_conv2d, True),
    'relu': OpKind((1,), _relu, _no_check, True),
    'mean': OpKind((1,), _mean, _no_check, True),
    'softmax_cross_entropy': OpKind((2,), _softmax_cross_entropy,
                                    _check_cross_entropy, True),
    # zero derivative everywhere, so sign is never recorded
    'sign': OpKind((1,), _sign, _no_check, False),
    'clamp': OpKind((1,), _clamp, _check_clamp, True),
    'scalar_mul': OpKind((2,), _scalar_mul, _check_scalar_mul, True),
    'sum_of_squares': OpKind((1,), _sum_of_squares, _no_check, True),
    'sum': OpKind((1,), _sum, _no_check, True),
    'reshape': OpKind((1,), _reshape, _check_reshape, True),
    'slice': OpKind((1,), _slice, _check_slice, True),
    'global_avg_pool': OpKind((1,), _global_avg_pool, _check_pool, True),
}


def forward_op(kind, inputs, **attrs):
    """
    Executes one operation and records it on the inputs' graph when the
    result needs a gradient.

    :param kind: operation name, one of ``OPERATIONS``
    :param inputs: tensors or array-likes (the latter become constants)
    :param attrs: operation attributes (``padding``, ``lo``/``hi``,
        ``axis``, ``shape``, ``start``/``stop``)
    :return: output ``Tensor``
    :raises: ``UnknownOperationError`` for unknown kinds, ``ShapeError``
        when inputs do not conform to the kind's shape rules
    """
    try:
        op = OPERATIONS[kind]
    except KeyError:
        raise UnknownOperationError(
            UNKNOWN_OPERATION_MSG % (kind, ', '.join(sorted(OPERATIONS))))

    tensors = [as_tensor(t) for t in inputs]
    if len(tensors) not in op.arity:
        raise ShapeError(ARITY_MSG % (
            kind, ' or '.join(str(n) for n in op.arity), len(tensors)))
    graph = _common_graph(kind, tensors)
    arrays = [t.data for t in tensors]
    op.check(kind, arrays, attrs)

    value, backward = op.forward(*arrays, **attrs)
    tracked = op.differentiable and any(t.requires_grad for t in tensors)
    output = Tensor(value, graph=graph, requires_grad=tracked)
    if graph is not None:
        graph.op_counts[kind] += 1
        if tracked:
            graph.record(kind, tensors, output, backward)
    return output


def finite_diff_check(f, point, h=1e-5):
    """
    Compares the reverse-mode gradient of ``f`` at ``point`` with central
    differences.

    :param f: callable mapping a ``Tensor`` to a scalar ``Tensor``
    :param point: array-like evaluation point
    :param h: difference step
    :return: max over coordinates of ``|analytic - central| / max(1,
        |analytic|)``
    :raises: ``NonFiniteError`` naming the coordinate whose evaluation is
        not finite, ``NonDifferentiablePointError`` when one-sided slopes
        disagree (a kink such as ``|x|`` at 0)
    """
    point = np.array(point, dtype=np.float64)

    graph = Graph()
    leaf = graph.variable(point)
    graph.backward(f(leaf))
    analytic = np.zeros(point.size) if leaf.grad is None \
        else leaf.grad.ravel()

    def evaluate(at):
        return float(f(Tensor(at)).data)

    centre = evaluate(point)
    if not np.isfinite(centre):
        raise NonFiniteError(NON_FINITE_EVALUATION_MSG % (-1, centre))

    worst = 0.0
    for index in range(point.size):
        step = np.zeros(point.size)
        step[index] = h
        step = step.reshape(point.shape)
        plus, minus = evaluate(point + step), evaluate(point - step)
        if not np.isfinite([plus, minus]).all():
            raise NonFiniteError(
                NON_FINITE_EVALUATION_MSG % (index, (plus, minus)), index)

        central = (plus - minus) / (2 * h)
        right, left = (plus - centre) / h, (centre - minus) / h
        if abs(right - left) > KINK_RATIO * h * max(1.0, abs(central)):
            raise NonDifferentiablePointError(
                NON_DIFFERENTIABLE_MSG % (index, left, right), index)

        error = abs(analytic[index] - central) / max(1.0,
                                                     abs(analytic[index]))
        worst = max(worst, error)
    logger.debug('finite difference check over %d coordinates: %.3g',
                 point.size, worst)
    return worst
