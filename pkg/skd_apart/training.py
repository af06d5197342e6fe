# -*- coding: utf-8 -*-
"""
Training loops for every regime plus clean and robust evaluation.

Randomness is split into independent streams keyed by the run seed:
batch order by ``(seed, epoch)``, training attacks and augmentation by
``(seed, epoch, batch)`` and evaluation attacks by ``(seed, attack,
batch)``. Two regimes that draw nothing from a stream therefore consume
the other streams identically.
"""
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .attacks import AttackSpec, correct_count, perturbed_inputs
from .data import BatchAugmentation
from .exceptions import (ImproperlyConfigured, NonFiniteError,
                         TrainingHalted, EmptyDatasetError)
from .generator import (GeneratorParams, GeneratorSource, OmegaStore, AUTO,
                        apart_step)
from .tensor import Graph, forward_op

logger = logging.getLogger(__name__)

REGIMES = ('standard', 'fgsm', 'f-plus-fgsm', 'pgd-n', 'fgsm-plus', 'apart',
           'apart-ablation-no-layerwise', 'apart-ablation-no-init')

# regime -> (layerwise, use_init)
GENERATOR_REGIMES = {
    'fgsm-plus': (False, True),
    'apart': (True, True),
    'apart-ablation-no-layerwise': (False, True),
    'apart-ablation-no-init': (True, False),
}

ATTACK_REGIMES = {'fgsm': 'fgsm', 'f-plus-fgsm': 'f-plus-fgsm', 'pgd-n': 'pgd'}

SHUFFLE_STREAM, ATTACK_STREAM, AUGMENT_STREAM, EVAL_STREAM = range(4)

# start error messages
UNKNOWN_REGIME_MSG = 'Unknown training regime "%s"; expected one of %s.'

NON_POSITIVE_MSG = 'Training %s must be > 0 but is %r.'

NEGATIVE_MSG = 'Training %s must be >= 0 but is %r.'

MOMENTUM_RANGE_MSG = 'Momentum must lie in [0, 1) but is %r.'

STEP_RANGE_MSG = 'Schedule step %r is outside [0, %r].'

NON_FINITE_UPDATE_MSG = \
    'Gradient is not finite at flat coordinate %d; update aborted.'

SHAPE_MISMATCH_MSG = 'Parameter, gradient and velocity shapes differ: %s.'

NON_FINITE_LOSS_MSG = \
    'Training loss is not finite at epoch %d, batch %d (regime %s); ' \
    'run halted.'

EMPTY_EVALUATION_MSG = 'Cannot evaluate on an empty dataset.'

RECORD_RANGE_MSG = 'Metrics field %s = %r is outside its range.'
# end error messages


@dataclass
class GeneratorConfig(object):
    """
    Hyperparameters of the learnable generator regimes. ``mu_alpha_max``
    is the peak of the cyclic step-size learning-rate schedule.
    """
    alpha_init: float = None
    alpha_omega: float = None
    lambda_reg: float = 400.0
    mu_alpha_max: float = 5e-8
    mu_omega: object = AUTO
    omega_init: str = 'zeros'

    def build(self, num_sites, epsilon):
        return GeneratorParams.initial(
            num_sites, epsilon, self.alpha_init, self.alpha_omega,
            lambda_reg=self.lambda_reg, mu_omega=self.mu_omega)


@dataclass
class TrainConfig(object):
    regime: str
    epochs: int
    batch_size: int = 128
    momentum: float = 0.9
    lr_max: float = 0.2
    weight_decay: float = 0.0
    epsilon: float = 8.0 / 255
    attack_steps: int = 10
    attack_step_size: float = None
    attack_init: str = None
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    eval_attacks: list = field(default_factory=list)
    eval_batch_size: int = 256
    clamp_inputs: bool = False
    augment: bool = False
    crop_padding: int = 2
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ImproperlyConfigured(UNKNOWN_REGIME_MSG % (
                self.regime, ', '.join(REGIMES)))
        for name in ('epochs', 'batch_size', 'lr_max', 'eval_batch_size'):
            if getattr(self, name) <= 0:
                raise ImproperlyConfigured(NON_POSITIVE_MSG % (
                    name, getattr(self, name)))
        for name in ('epsilon', 'weight_decay', 'checkpoint_every'):
            if getattr(self, name) < 0:
                raise ImproperlyConfigured(NEGATIVE_MSG % (
                    name, getattr(self, name)))
        if self.generator.mu_alpha_max < 0:
            raise ImproperlyConfigured(NEGATIVE_MSG % (
                'mu_alpha_max', self.generator.mu_alpha_max))
        if not 0 <= self.momentum < 1:
            raise ImproperlyConfigured(MOMENTUM_RANGE_MSG % self.momentum)

    @property
    def uses_generator(self):
        return self.regime in GENERATOR_REGIMES

    def training_attack(self):
        """``AttackSpec`` of the non-learned regimes, ``None`` otherwise."""
        kind = ATTACK_REGIMES.get(self.regime)
        if kind is None:
            return None
        return AttackSpec(kind, self.epsilon,
                          steps=self.attack_steps if kind == 'pgd' else 0,
                          step_size=self.attack_step_size,
                          init=self.attack_init if kind == 'pgd' else None,
                          clamp_inputs=self.clamp_inputs)


@dataclass
class MetricsRecord(object):
    """
    One epoch of a run. ``wall_time`` is informational and excluded from
    equality and from the JSON form.
    """
    epoch: int
    train_loss: float
    train_robust_acc: float
    test_clean_acc: float = None
    test_robust_acc: dict = field(default_factory=dict)
    alpha: list = None
    alpha_omega: float = None
    lr: float = 0.0
    wall_time: float = field(default=0.0, compare=False)

    def to_json(self):
        return {
            'epoch': self.epoch,
            'train_loss': self.train_loss,
            'train_robust_acc': self.train_robust_acc,
            'test_clean_acc': self.test_clean_acc,
            'test_robust_acc': dict(self.test_robust_acc),
            'alpha': self.alpha,
            'alpha_omega': self.alpha_omega,
            'lr': self.lr,
        }

    @classmethod
    def from_json(cls, document):
        return cls(**document)

    def check(self):
        """:raises: ``NonFiniteError`` or ``ValueError`` on a bad field"""
        values = [('train_loss', self.train_loss), ('lr', self.lr)]
        values += [('alpha', a) for a in self.alpha or ()]
        accuracies = [('train_robust_acc', self.train_robust_acc),
                      ('test_clean_acc', self.test_clean_acc)]
        accuracies += sorted(self.test_robust_acc.items())
        for name, value in values + accuracies:
            if value is not None and not np.isfinite(value):
                raise NonFiniteError(RECORD_RANGE_MSG % (name, value))
        for name, value in accuracies:
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValueError(RECORD_RANGE_MSG % (name, value))
        return self


class TrainState(object):
    """
    Everything a run carries between batches besides the parameters:
    momentum buffers, the global step and the generator state.
    """

    def __init__(self, config, net, steps_per_epoch, input_shape=None):
        self.velocity = dict((name, np.zeros(value.shape))
                             for name, value in net.params.items())
        self.step = 0
        self.total_steps = config.epochs * steps_per_epoch
        self.generator = None
        self.omega = None
        if config.uses_generator:
            self.generator = config.generator.build(net.num_sites,
                                                    config.epsilon)
            self.omega = OmegaStore(input_shape or net.input_shape,
                                    config.generator.omega_init, config.seed)

    def perturbation_source(self, config):
        """The generator as used in training, for evaluation and analysis."""
        if not config.uses_generator:
            return config.training_attack()
        layerwise, use_init = GENERATOR_REGIMES[config.regime]
        return GeneratorSource(self.generator, self.omega, layerwise,
                               use_init, config.clamp_inputs)


def cyclic_lr(step, total, max_lr):
    """
    Triangular schedule: ``0`` at step 0, ``max_lr`` at ``total / 2`` and
    ``0`` again at ``total``.

    :raises: ``ValueError`` when ``step`` is outside ``[0, total]``
    """
    if step < 0 or step > total or total <= 0:
        raise ValueError(STEP_RANGE_MSG % (step, total))
    return float(np.interp(step, [0.0, total / 2.0, total],
                           [0.0, max_lr, 0.0]))


def sgd_momentum_update(theta, grads, velocity, lr, momentum,
                        weight_decay=0.0):
    """
    ``v' = momentum * v + g`` and ``theta' = theta - lr * v'``, with
    ``g`` extended by ``weight_decay * theta`` when set.

    :return: ``(theta', v')``
    :raises: ``NonFiniteError`` naming the first non-finite coordinate
    """
    theta = np.asarray(theta, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    velocity = np.asarray(velocity, dtype=np.float64)
    if not theta.shape == grads.shape == velocity.shape:
        raise ValueError(SHAPE_MISMATCH_MSG % (
            [theta.shape, grads.shape, velocity.shape],))
    bad = np.flatnonzero(~np.isfinite(grads))
    if bad.size:
        raise NonFiniteError(NON_FINITE_UPDATE_MSG % bad[0], int(bad[0]))
    if weight_decay:
        grads = grads + weight_decay * theta
    velocity = momentum * velocity + grads
    return theta - lr * velocity, velocity


def parameter_gradients(net, x_in, y, block_deltas=None):
    """
    Mean cross-entropy at the (already perturbed) inputs and its gradient
    for every parameter.

    :return: ``(loss, logits, grads)``
    """
    graph = Graph()
    params = net.bind(graph)
    losses, logits, _ = net.per_example_loss(graph.constant(x_in), y,
                                             block_deltas, params)
    loss = forward_op('mean', (losses,))
    graph.backward(loss)
    grads = dict((name, np.zeros(t.shape) if t.grad is None else t.grad)
                 for name, t in params.items())
    return loss.item(), logits.data, grads


def _regime_step(config, net, state, x, y, idx, attack_seed, augmentation):
    if config.regime == 'standard':
        return parameter_gradients(net, x, y)

    if not config.uses_generator:
        perturbation = config.training_attack().perturb(
            net, x, y, idx, seed=attack_seed)
        return parameter_gradients(net, perturbed_inputs(x, perturbation)[0],
                                   y)

    layerwise, use_init = GENERATOR_REGIMES[config.regime]
    gen = replace(state.generator, mu_alpha=cyclic_lr(
        state.step, state.total_steps, config.generator.mu_alpha_max))
    result = apart_step(net, x, y, gen, state.omega, idx, layerwise,
                        use_init, config.clamp_inputs, augmentation)
    state.generator = result.generator
    rounds = result.second_round
    return rounds.loss, rounds.logits, rounds.param_grads


def train_epoch(config, net, state, dataset, epoch, test_set=None):
    """
    One pass over ``dataset`` in a seeded order, updating ``net.params``
    and ``state`` in place.

    :param epoch: 1-based epoch index
    :param test_set: evaluated after the epoch when given
    :return: ``MetricsRecord``
    :raises: ``TrainingHalted`` carrying the partial record when a loss is
        not finite
    """
    started = time.perf_counter()
    loss_sum, correct, seen, lr = 0.0, 0, 0, 0.0

    def snapshot():
        gen = state.generator
        return MetricsRecord(
            epoch, loss_sum / max(seen, 1), correct / float(max(seen, 1)),
            alpha=None if gen is None else gen.alpha.tolist(),
            alpha_omega=None if gen is None else gen.alpha_omega, lr=lr,
            wall_time=time.perf_counter() - started)

    batches = dataset.batches(config.batch_size,
                              seed=[config.seed, SHUFFLE_STREAM, epoch])
    for batch, (x, y, idx) in enumerate(batches):
        lr = cyclic_lr(state.step, state.total_steps, config.lr_max)
        augmentation = None
        if config.augment and dataset.is_image:
            rng = np.random.default_rng(
                [config.seed, AUGMENT_STREAM, epoch, batch])
            augmentation = BatchAugmentation.draw(
                len(y), dataset.image_shape, config.crop_padding, rng)
            x = augmentation.apply(x)

        try:
            loss, logits, grads = _regime_step(
                config, net, state, x, y, idx,
                [config.seed, ATTACK_STREAM, epoch, batch], augmentation)
        except NonFiniteError as error:
            logger.warning('epoch %d batch %d: %s', epoch, batch, error)
            raise TrainingHalted(str(error), snapshot())
        if not np.isfinite(loss):
            message = NON_FINITE_LOSS_MSG % (epoch, batch, config.regime)
            logger.warning(message)
            raise TrainingHalted(message, snapshot())

        for name in net.params:
            net.params[name], state.velocity[name] = sgd_momentum_update(
                net.params[name], grads[name], state.velocity[name], lr,
                config.momentum, config.weight_decay)
        state.step += 1
        loss_sum += loss * len(y)
        correct += int(np.sum(np.argmax(logits, axis=1) == y))
        seen += len(y)

    record = snapshot()
    if test_set is not None:
        results = evaluate(net, test_set, config.eval_attacks,
                           config.eval_batch_size, config.seed)
        record.test_clean_acc = results.pop('clean')
        record.test_robust_acc = results
    record.wall_time = time.perf_counter() - started
    logger.info('epoch %d [%s]: loss=%.4f train_robust_acc=%.4f '
                'test_clean_acc=%s test_robust_acc=%s alpha=%s (%.2fs)',
                epoch, config.regime, record.train_loss,
                record.train_robust_acc, record.test_clean_acc,
                record.test_robust_acc, record.alpha, record.wall_time)
    return record.check()


def evaluate(net, dataset, attacks, batch_size=256, seed=0, sources=None):
    """
    Clean accuracy and accuracy under every attack, with perturbations
    regenerated per batch against the current parameters. Neither ``net``
    nor any generator state is modified.

    :param attacks: ``AttackSpec`` list
    :param sources: extra ``{name: source}`` perturbation sources with a
        ``perturb(model, x, y, idx, seed)`` method
    :return: dict with ``clean`` and one entry per attack name
    :raises: ``EmptyDatasetError``
    """
    if not len(dataset):
        raise EmptyDatasetError(EMPTY_EVALUATION_MSG)
    named = [(attack.name, attack) for attack in attacks]
    named += sorted((sources or {}).items())
    counts = dict((name, 0) for name, _ in named)
    clean = 0
    for batch, (x, y, idx) in enumerate(dataset.batches(batch_size)):
        clean += correct_count(net, x, y)
        for position, (name, source) in enumerate(named):
            perturbation = source.perturb(
                net, x, y, idx, seed=[seed, EVAL_STREAM, position, batch])
            counts[name] += correct_count(net, x, y, perturbation)
    results = {'clean': clean / float(len(dataset))}
    for name, _ in named:
        results[name] = counts[name] / float(len(dataset))
    return results


def train(config, net, train_set, test_set=None, state=None, callback=None):
    """
    Runs ``config.epochs`` epochs.

    :param callback: called as ``callback(record, state)`` after each epoch
    :return: ``(records, state)``
    """
    steps_per_epoch = -(-len(train_set) // config.batch_size)
    if state is None:
        state = TrainState(config, net, steps_per_epoch,
                           train_set.input_shape)
    records = []
    for epoch in range(1, config.epochs + 1):
        record = train_epoch(config, net, state, train_set, epoch, test_set)
        records.append(record)
        if callback is not None:
            callback(record, state)
    return records, state
