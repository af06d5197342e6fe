# -*- coding: utf-8 -*-
"""
Diagnostics for perturbation strength: the gap between a training-time
perturbation and a stronger one, a brute-force worst case for small
inputs, cross-model transfer and the epsilon sweep.
"""
import itertools
import logging
from collections import namedtuple
from dataclasses import dataclass, replace

import numpy as np

from .attacks import (AttackSpec, PerturbationSet, correct_count,
                      perturbed_losses)
from .exceptions import (BudgetExceededError, EmptyDatasetError,
                         ImproperlyConfigured, ShapeError, SkdApartError)
from .training import evaluate, train

logger = logging.getLogger(__name__)

ORACLE_MODES = ('grid', 'corners')

DEFAULT_ORACLE_BUDGET = 10 ** 6

EVALUATION_SUBSET_SIZE = 512

# candidate losses evaluated per forward pass
ORACLE_CHUNK = 4096

# start error messages
EMPTY_BATCH_MSG = 'Strength gap needs a non-empty batch.'

BUDGET_MSG = \
    'Brute-force search over %d dimensions with %d grid points needs %d ' \
    'evaluations per example; the budget is %d.'

GRID_POINTS_MSG = 'Brute-force grid needs at least 2 points, got %r.'

UNKNOWN_MODE_MSG = 'Unknown oracle mode "%s"; expected one of %s.'

TRANSFER_SHAPE_MSG = \
    'Source model takes inputs of shape %s but the target takes %s.'

DATASET_SHAPE_MSG = 'Dataset inputs have shape %s but the model takes %s.'

NO_GENERATOR_MSG = 'Checkpoint of epoch %d has no generator state.'
# end error messages


@dataclass
class GapRecord(object):
    """``gap`` is ``loss_b - loss_a``, both means over one batch."""
    epoch: int
    method_a: str
    method_b: str
    gap: float
    loss_a: float
    loss_b: float


SweepRow = namedtuple('SweepRow', [
    'epsilon_train', 'clean_acc', 'robust_acc', 'status'])

TransferRow = namedtuple('TransferRow', ['epoch', 'transfer_acc',
                                         'noise_acc'])


def source_name(source):
    return getattr(source, 'name', type(source).__name__)


def evaluation_subset(dataset, size=EVALUATION_SUBSET_SIZE, seed=0):
    """The fixed seeded subset every gap is averaged over."""
    return dataset.subset(size, seed)


def strength_gap(model, source_a, source_b, x, y, idx=None, epoch=0,
                 seed=0):
    """
    ``G = mean L(x + delta_B) - mean L(x + delta_A)`` on one snapshot.
    Both sources are seeded with ``(seed, epoch)``, so the same random
    attack on both sides gives a zero gap. Against the oracle only the input
    perturbation of ``source_a`` counts.

    :param source_a: perturbation source used in training, e.g. an
        ``AttackSpec`` or the run's ``GeneratorSource``
    :param source_b: the stronger reference, e.g. PGD or the oracle
    :raises: ``EmptyDatasetError`` for an empty batch
    """
    x = np.asarray(x, dtype=np.float64)
    if not len(y):
        raise EmptyDatasetError(EMPTY_BATCH_MSG)
    if idx is None:
        idx = np.arange(len(y))
    stream = [seed, epoch]
    delta_a = source_a.perturb(model, x, y, idx, seed=stream)
    if isinstance(source_b, BruteForceOracle):
        # the oracle searches input perturbations only
        delta_a = delta_a.input_only()
    delta_b = source_b.perturb(model, x, y, idx, seed=stream)
    loss_a = float(np.mean(perturbed_losses(model, x, y, delta_a)))
    loss_b = float(np.mean(perturbed_losses(model, x, y, delta_b)))
    return GapRecord(epoch, source_name(source_a), source_name(source_b),
                     loss_b - loss_a, loss_a, loss_b)


def oracle_candidates(dim, epsilon, grid_points, mode='grid'):
    """
    ``grid``: every point of ``{-eps, ..., +eps}^dim``.
    ``corners``: the ``2^dim`` sign corners plus each axis grid with the
    other coordinates at zero.
    """
    if mode not in ORACLE_MODES:
        raise ImproperlyConfigured(UNKNOWN_MODE_MSG % (
            mode, ', '.join(ORACLE_MODES)))
    axis = np.linspace(-epsilon, epsilon, grid_points)
    if mode == 'grid':
        return np.array(list(itertools.product(axis, repeat=dim)))
    corners = np.array(list(itertools.product((-epsilon, epsilon),
                                              repeat=dim)))
    lines = np.zeros((dim * grid_points, dim))
    for d in range(dim):
        lines[d * grid_points:(d + 1) * grid_points, d] = axis
    return np.vstack([corners, lines])


def candidate_count(dim, grid_points, mode='grid'):
    if mode == 'grid':
        return grid_points ** dim
    return 2 ** dim + dim * grid_points


def brute_force_worst_case(model, x, y, epsilon, grid_points=21,
                           budget=DEFAULT_ORACLE_BUDGET, mode='grid'):
    """
    Exhaustive search for ``max_{|delta| <= eps} L(x + delta, y)`` over a
    finite candidate set, per example.

    :return: ``(delta, loss)`` with shapes ``x.shape`` and ``(N,)``
    :raises: ``BudgetExceededError`` carrying the required evaluation
        count when it is above ``budget``
    """
    if grid_points < 2:
        raise ImproperlyConfigured(GRID_POINTS_MSG % grid_points)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    dim = int(np.prod(x.shape[1:]))
    required = candidate_count(dim, grid_points, mode)
    if required > budget:
        raise BudgetExceededError(BUDGET_MSG % (
            dim, grid_points, required, budget), required)

    candidates = oracle_candidates(dim, epsilon, grid_points, mode)
    candidates = candidates.reshape((-1,) + x.shape[1:])
    deltas = np.zeros(x.shape)
    best = np.zeros(len(x))
    for n in range(len(x)):
        losses = []
        for start in range(0, len(candidates), ORACLE_CHUNK):
            chunk = candidates[start:start + ORACLE_CHUNK]
            inputs = x[n] + chunk
            labels = np.repeat(y[n:n + 1], len(chunk), axis=0)
            losses.append(perturbed_losses(model, inputs, labels))
        losses = np.concatenate(losses)
        winner = int(np.argmax(losses))
        deltas[n] = candidates[winner]
        best[n] = losses[winner]
    return deltas, best


class BruteForceOracle(object):
    """Perturbation source wrapping :func:`brute_force_worst_case`."""

    def __init__(self, epsilon, grid_points=21, budget=DEFAULT_ORACLE_BUDGET,
                 mode='grid'):
        self.epsilon = epsilon
        self.grid_points = grid_points
        self.budget = budget
        self.mode = mode
        self.name = 'oracle-%s-%d' % (mode, grid_points)

    def perturb(self, model, x, y, idx=None, seed=None):
        delta, _ = brute_force_worst_case(model, x, y, self.epsilon,
                                          self.grid_points, self.budget,
                                          self.mode)
        return PerturbationSet(delta, provenance=self.name,
                               epsilon=self.epsilon)


def _check_transfer_shapes(target, source_model, dataset):
    if tuple(target.input_shape) != tuple(source_model.input_shape):
        raise ShapeError(TRANSFER_SHAPE_MSG % (
            source_model.input_shape, target.input_shape))
    if tuple(dataset.input_shape) != tuple(target.input_shape):
        raise ShapeError(DATASET_SHAPE_MSG % (
            dataset.input_shape, target.input_shape))


def cross_eval(target, source, source_model, dataset, batch_size=256,
               seed=0):
    """
    Accuracy of ``target`` on inputs perturbed by ``source`` attacking
    ``source_model``. Only the input perturbation transfers; block
    perturbations belong to the source network.

    :raises: ``ShapeError`` when the models or the data disagree on the
        input shape
    """
    _check_transfer_shapes(target, source_model, dataset)
    if not len(dataset):
        raise EmptyDatasetError(EMPTY_BATCH_MSG)
    correct = 0
    for batch, (x, y, idx) in enumerate(dataset.batches(batch_size)):
        perturbation = source.perturb(source_model, x, y, idx,
                                      seed=[seed, batch])
        correct += correct_count(target, x, y, perturbation.input_only())
    return correct / float(len(dataset))


def deterioration_curve(target, checkpoints, attack, dataset, batch_size=256,
                        seed=0):
    """
    Transfer accuracy of ``target`` under ``attack`` run against every
    checkpoint of a source run, next to the random-sign noise level of
    the same budget (identical for every row).

    :return: list of ``TransferRow``
    """
    noise = AttackSpec('random-sign', attack.epsilon)
    rows = []
    for checkpoint in checkpoints:
        source_model = checkpoint.model()
        transfer = cross_eval(target, attack, source_model, dataset,
                              batch_size, seed)
        noise_acc = cross_eval(target, noise, source_model, dataset,
                               batch_size, seed)
        rows.append(TransferRow(checkpoint.epoch, transfer, noise_acc))
        logger.info('transfer from epoch %d: %.4f (noise %.4f)',
                    checkpoint.epoch, transfer, noise_acc)
    return rows


def gap_series(checkpoints, source_a, source_b, dataset, seed=0,
               clamp_inputs=False):
    """
    One ``GapRecord`` per checkpoint on the same examples.

    :param source_a: ``None`` uses each checkpoint's learned generator
        (or raises when it has none)
    """
    x, y, idx = dataset.features, dataset.labels, dataset.indices
    records = []
    for checkpoint in checkpoints:
        model = checkpoint.model()
        source = source_a
        if source is None:
            source = checkpoint.generator_source(clamp_inputs)
            if source is None:
                raise ImproperlyConfigured(NO_GENERATOR_MSG % checkpoint.epoch)
        record = strength_gap(model, source, source_b, x, y, idx,
                              checkpoint.epoch, seed)
        logger.info('gap %s -> %s at epoch %d: %.6f', record.method_a,
                    record.method_b, record.epoch, record.gap)
        records.append(record)
    return records


def epsilon_sweep(template, epsilons, attack, build_model, train_set,
                  test_set):
    """
    Trains one model per training epsilon and evaluates it under the
    fixed ``attack``. A failing cell is recorded and the sweep goes on.

    :param template: ``TrainConfig`` whose ``epsilon`` is replaced
    :param build_model: ``build_model()`` returns a fresh network
    :return: list of ``SweepRow`` in the order of ``epsilons``
    """
    rows = []
    for epsilon in epsilons:
        try:
            config = replace(template, epsilon=epsilon)
            net = build_model()
            train(config, net, train_set)
            results = evaluate(net, test_set, [attack],
                               config.eval_batch_size, config.seed)
        except SkdApartError as error:
            logger.warning('sweep cell epsilon=%r failed: %s', epsilon, error)
            rows.append(SweepRow(epsilon, float('nan'), float('nan'),
                                 'failed: %s' % str(error).splitlines()[0]))
            continue
        row = SweepRow(epsilon, results['clean'], results[attack.name],
                       'completed')
        logger.info('sweep cell epsilon=%r: clean=%.4f robust=%.4f',
                    epsilon, row.clean_acc, row.robust_acc)
        rows.append(row)
    return rows
