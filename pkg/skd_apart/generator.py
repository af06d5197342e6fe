# -*- coding: utf-8 -*-
"""
Learnable perturbation generator.

One step takes two rounds of forward and backward propagation:

1. forward at ``x + alpha_omega * omega_x``; one backward yields the
   gradient at every perturbation site. The input perturbation becomes
   ``clamp(alpha_omega * omega_x + alpha_1 * sign(dx_1), -eps, eps)``
   and block ``i`` gets ``alpha_i * sign(dx_i)``.
2. forward with all perturbations injected, built from tracked leaves
   ``omega_x`` and ``alpha_i`` with the first-round signs frozen; one
   backward yields the gradients for theta, omega_x and every alpha_i.

``omega_x`` then moves by ``mu_omega * sign(grad)`` (clamped to [-1, 1])
and ``alpha_i`` by ``mu_alpha * (grad - 2 * lambda * alpha_i)``: gradient
ascent on the loss the trainer descends. Without block perturbations the
same step is the learnable-initialization FGSM variant.
"""
import logging
from collections import namedtuple
from dataclasses import dataclass, replace

import numpy as np

from .attacks import PerturbationSet, project_linf, clamp_to_pixels
from .exceptions import ImproperlyConfigured, NonFiniteError
from .tensor import Graph, forward_op

logger = logging.getLogger(__name__)

OMEGA_INITS = ('zeros', 'uniform')

AUTO = 'auto'

# start error messages
NEGATIVE_LAMBDA_MSG = 'Generator lambda_reg must be >= 0 but is %r.'

NON_FINITE_ALPHA_MSG = 'Generator step sizes must be finite but are %r.'

BAD_MU_OMEGA_MSG = 'Generator mu_omega must be "auto" or a number >= 0, ' \
                   'got %r.'

NEGATIVE_MU_ALPHA_MSG = 'Generator mu_alpha must be >= 0 but is %r.'

UNKNOWN_OMEGA_INIT_MSG = 'Unknown omega initialization "%s"; expected %s.'

NON_FINITE_SITE_GRADIENT_MSG = \
    'First-round gradient at perturbation site %d is not finite ' \
    '(batch element %d); generator step aborted.'

NON_FINITE_GENERATOR_GRADIENT_MSG = \
    'Second-round gradient of %s is not finite; generator step aborted.'

SITE_COUNT_MSG = 'Generator has %d step sizes but the model has %d ' \
                 'perturbation sites.'
# end error messages


@dataclass
class GeneratorParams(object):
    """
    Learnable state of the generator besides the per-example store.

    :param alpha: step size per perturbation site (input first)
    :param alpha_omega: scale of the learned initialization
    :param epsilon: L-inf bound of the input perturbation
    :param lambda_reg: weight of the ``alpha_i^2`` penalty
    :param mu_alpha: current step-size learning rate
    :param mu_omega: ``"auto"`` (``alpha_1 / alpha_omega``) or a number
    """
    alpha: np.ndarray
    alpha_omega: float
    epsilon: float
    lambda_reg: float = 400.0
    mu_alpha: float = 0.0
    mu_omega: object = AUTO

    def __post_init__(self):
        self.alpha = np.array(self.alpha, dtype=np.float64).reshape(-1)
        if self.lambda_reg < 0:
            raise ImproperlyConfigured(NEGATIVE_LAMBDA_MSG % self.lambda_reg)
        if not np.isfinite(self.alpha).all():
            raise ImproperlyConfigured(NON_FINITE_ALPHA_MSG % (
                self.alpha.tolist(),))
        if self.mu_alpha < 0:
            raise ImproperlyConfigured(NEGATIVE_MU_ALPHA_MSG % self.mu_alpha)
        if self.mu_omega != AUTO and (
                isinstance(self.mu_omega, str) or self.mu_omega < 0):
            raise ImproperlyConfigured(BAD_MU_OMEGA_MSG % (self.mu_omega,))

    @classmethod
    def initial(cls, num_sites, epsilon, alpha_init=None, alpha_omega=None,
                **kwargs):
        """
        All step sizes start from one value, ``epsilon / 2`` by default;
        ``alpha_omega`` defaults to ``epsilon``.
        """
        if alpha_init is None:
            alpha_init = epsilon / 2.0
        if alpha_omega is None:
            alpha_omega = epsilon
        return cls(np.full(num_sites, float(alpha_init)), alpha_omega,
                   epsilon, **kwargs)

    @property
    def num_sites(self):
        return self.alpha.size

    def resolved_mu_omega(self):
        if self.mu_omega != AUTO:
            return float(self.mu_omega)
        if self.alpha_omega == 0:
            return 0.0
        return float(self.alpha[0] / self.alpha_omega)

    def to_dict(self):
        return {
            'alpha': self.alpha.tolist(),
            'alpha_omega': self.alpha_omega,
            'epsilon': self.epsilon,
            'lambda_reg': self.lambda_reg,
            'mu_alpha': self.mu_alpha,
            'mu_omega': self.mu_omega,
        }

    @classmethod
    def from_dict(cls, document):
        return cls(**document)


class OmegaStore(object):
    """
    Per-example initializations ``omega_x`` keyed by dataset index, stored
    in un-augmented coordinates. Entries are created on first use and kept
    inside [-1, 1].
    """

    def __init__(self, shape, init='zeros', seed=0):
        if init not in OMEGA_INITS:
            raise ImproperlyConfigured(UNKNOWN_OMEGA_INIT_MSG % (
                init, ', '.join(OMEGA_INITS)))
        self.shape = tuple(shape)
        self.init = init
        self.seed = seed
        self.entries = {}

    def __len__(self):
        return len(self.entries)

    def __contains__(self, index):
        return int(index) in self.entries

    def _initial(self, index):
        if self.init == 'zeros':
            return np.zeros(self.shape)
        rng = np.random.default_rng([self.seed, int(index)])
        return rng.uniform(-1.0, 1.0, size=self.shape)

    def get(self, idx, create=True):
        """
        :param idx: dataset indices
        :param create: store fresh entries; ``False`` only reads
        :return: array of shape ``(len(idx),) + shape``
        """
        rows = []
        for index in np.asarray(idx).reshape(-1):
            index = int(index)
            if index not in self.entries:
                value = self._initial(index)
                if not create:
                    rows.append(value)
                    continue
                self.entries[index] = value
            rows.append(self.entries[index])
        if not rows:
            return np.zeros((0,) + self.shape)
        return np.stack(rows)

    def set(self, idx, values):
        for index, value in zip(np.asarray(idx).reshape(-1), values):
            self.entries[int(index)] = np.clip(value, -1.0, 1.0)

    def items(self):
        return sorted(self.entries.items())

    def copy(self):
        store = OmegaStore(self.shape, self.init, self.seed)
        store.entries = dict((k, v.copy()) for k, v in self.entries.items())
        return store

    def to_dict(self):
        return {
            'shape': list(self.shape),
            'init': self.init,
            'seed': self.seed,
            'entries': [[index, value.ravel().tolist()]
                        for index, value in self.items()],
        }

    @classmethod
    def from_dict(cls, document):
        store = cls(document['shape'], document['init'], document['seed'])
        for index, values in document['entries']:
            store.entries[int(index)] = np.array(
                values, dtype=np.float64).reshape(store.shape)
        return store


SecondRound = namedtuple('SecondRound', [
    'loss', 'losses', 'logits', 'param_grads', 'omega_grad', 'alpha_grads'])

StepResult = namedtuple('StepResult', [
    'perturbation', 'second_round', 'generator', 'omega'])


def _omega_view(omega, idx, augmentation, create=True):
    view = omega.get(idx, create=create)
    if augmentation is not None:
        view = augmentation.apply(view)
    return view


def init_delta1(gen, omega, idx, augmentation=None, create=True):
    """``delta_1 = alpha_omega * omega_x`` for the batch ``idx``."""
    return gen.alpha_omega * _omega_view(omega, idx, augmentation, create)


def _check_sites(gen, model):
    if gen.num_sites != model.num_sites:
        raise ImproperlyConfigured(SITE_COUNT_MSG % (
            gen.num_sites, model.num_sites))


def generate(model, x, y, gen, omega, idx, layerwise=True, use_init=True,
             clamp_inputs=False, augmentation=None, create=True):
    """
    First round: one forward at the initialized input and one backward
    for the gradients at all perturbation sites.

    :param layerwise: produce block perturbations (``False`` keeps every
        block perturbation at zero)
    :param use_init: start from ``alpha_omega * omega_x`` (``False``
        starts from zero)
    :param create: whether unseen examples get a stored ``omega_x``
    :return: ``PerturbationSet`` whose ``site_signs`` keep the signs the
        second round treats as constants
    :raises: ``NonFiniteError`` when a site gradient is not finite
    """
    _check_sites(gen, model)
    x = np.asarray(x, dtype=np.float64)
    if use_init:
        base = init_delta1(gen, omega, idx, augmentation, create)
    else:
        base = np.zeros(x.shape)
    start = clamp_to_pixels(x, base) if clamp_inputs else base

    graph = Graph()
    x_in = graph.variable(x + start, name='input')
    params = model.bind(graph)
    losses, _, inputs = model.per_example_loss(x_in, y, None, params)
    graph.backward(forward_op('sum', (losses,)))

    signs = []
    for site, tensor in enumerate(inputs, 1):
        grad = np.zeros(tensor.shape) if tensor.grad is None else tensor.grad
        finite = np.isfinite(grad.reshape(grad.shape[0], -1)).all(axis=1)
        if not finite.all():
            element = int(np.argmin(finite))
            raise NonFiniteError(
                NON_FINITE_SITE_GRADIENT_MSG % (site, element), element)
        signs.append(np.sign(grad))

    delta1 = project_linf(base + gen.alpha[0] * signs[0], gen.epsilon)
    if clamp_inputs:
        delta1 = clamp_to_pixels(x, delta1)

    block_deltas = None
    if layerwise and model.num_blocks:
        block_deltas = [gen.alpha[site] * signs[site]
                        for site in range(1, gen.num_sites)]
    provenance = 'apart' if layerwise else 'fgsm-plus'
    return PerturbationSet(delta1, block_deltas, provenance, gen.epsilon,
                           signs)


def second_round(model, x, y, gen, omega, idx, perturbation, layerwise=True,
                 use_init=True, clamp_inputs=False, augmentation=None):
    """
    Forward with every perturbation injected and one backward. Signs from
    the first round are constants, so ``dL/dalpha_i`` is the dot product
    of ``dL/ddelta_i`` with ``sign(dx_i)`` and ``dL/domega_x`` flows
    through ``alpha_omega * omega_x`` and the epsilon clamp only.
    """
    x = np.asarray(x, dtype=np.float64)
    signs = perturbation.site_signs
    graph = Graph()
    alphas = [graph.variable(value, name='alpha%d' % site)
              for site, value in enumerate(gen.alpha, 1)]

    omega_leaf = None
    step = forward_op('scalar_mul', (alphas[0], graph.constant(signs[0])))
    if use_init:
        omega_leaf = graph.variable(_omega_view(omega, idx, augmentation),
                                    name='omega')
        start = forward_op('scalar_mul', (gen.alpha_omega, omega_leaf))
        delta1 = start + step
    else:
        delta1 = graph.constant(np.zeros(x.shape)) + step
    delta1 = forward_op('clamp', (delta1,), lo=-gen.epsilon, hi=gen.epsilon)
    if clamp_inputs:
        delta1 = forward_op('clamp', (x + delta1,), lo=0.0, hi=1.0) - x
    x_in = x + delta1

    block_deltas = None
    if layerwise and model.num_blocks:
        block_deltas = [
            forward_op('scalar_mul',
                       (alphas[site], graph.constant(signs[site])))
            for site in range(1, gen.num_sites)]

    params = model.bind(graph)
    losses, logits, _ = model.per_example_loss(x_in, y, block_deltas, params)
    loss = forward_op('mean', (losses,))
    graph.backward(loss)

    alpha_grads = np.array([0.0 if a.grad is None else float(a.grad)
                            for a in alphas])
    omega_grad = None
    if omega_leaf is not None:
        omega_grad = np.zeros(omega_leaf.shape) if omega_leaf.grad is None \
            else omega_leaf.grad
    for label, value in (('alpha', alpha_grads), ('omega', omega_grad)):
        if value is not None and not np.isfinite(value).all():
            raise NonFiniteError(NON_FINITE_GENERATOR_GRADIENT_MSG % label)

    param_grads = dict(
        (name, np.zeros(t.shape) if t.grad is None else t.grad)
        for name, t in params.items())
    return SecondRound(loss.item(), losses.data,
                       None if logits is None else logits.data,
                       param_grads, omega_grad, alpha_grads)


def update_generator(gen, omega, idx, grads, layerwise=True, use_init=True,
                     augmentation=None):
    """
    Gradient ascent on the generator.

    ``omega_x <- clamp(omega_x + mu_omega * sign(dL/domega_x), -1, 1)``
    ``alpha_i <- alpha_i + mu_alpha * (dL/dalpha_i - 2 * lambda * alpha_i)``

    Only the step sizes of active sites move: the input site always, the
    block sites when ``layerwise``.

    :return: ``(gen, omega)``; ``omega`` is updated in place
    """
    mu_omega = gen.resolved_mu_omega()
    if use_init and mu_omega and grads.omega_grad is not None:
        view = _omega_view(omega, idx, augmentation)
        moved = np.clip(view + mu_omega * np.sign(grads.omega_grad),
                        -1.0, 1.0)
        if augmentation is not None:
            moved = augmentation.restore(moved, omega.get(idx))
        omega.set(idx, moved)

    active = range(gen.num_sites) if layerwise else range(1)
    alpha = gen.alpha.copy()
    for site in active:
        alpha[site] = alpha[site] + gen.mu_alpha * (
            grads.alpha_grads[site] - gen.lambda_reg * 2.0 * alpha[site])
    return replace(gen, alpha=alpha), omega


def apart_step(model, x, y, gen, omega, idx, layerwise=True, use_init=True,
               clamp_inputs=False, augmentation=None):
    """
    Both rounds and the generator update. Model parameters are left to the
    caller, which descends on ``second_round.param_grads``.

    :return: ``StepResult``
    """
    perturbation = generate(model, x, y, gen, omega, idx, layerwise,
                            use_init, clamp_inputs, augmentation)
    grads = second_round(model, x, y, gen, omega, idx, perturbation,
                         layerwise, use_init, clamp_inputs, augmentation)
    gen, omega = update_generator(gen, omega, idx, grads, layerwise,
                                  use_init, augmentation)
    logger.debug('generator step: loss=%.6f alpha=%s', grads.loss,
                 np.array2string(gen.alpha, precision=6))
    return StepResult(perturbation, grads, gen, omega)


def fgsm_plus_step(model, x, y, gen, omega, idx, clamp_inputs=False,
                   augmentation=None):
    """Generator step with every block perturbation held at zero."""
    return apart_step(model, x, y, gen, omega, idx, layerwise=False,
                      clamp_inputs=clamp_inputs, augmentation=augmentation)


class GeneratorSource(object):
    """
    Read-only perturbation source over a generator snapshot, so learned
    perturbations can be measured like any attack. Unseen examples use
    their initial ``omega_x`` without being stored.
    """

    def __init__(self, gen, omega, layerwise=True, use_init=True,
                 clamp_inputs=False, name=None):
        self.gen = gen
        self.omega = omega
        self.layerwise = layerwise
        self.use_init = use_init
        self.clamp_inputs = clamp_inputs
        self.name = name or ('apart' if layerwise else 'fgsm-plus')

    def perturb(self, model, x, y, idx=None, seed=None):
        if idx is None:
            idx = np.arange(len(x))
        return generate(model, x, y, self.gen, self.omega, idx,
                        self.layerwise, self.use_init, self.clamp_inputs,
                        create=False)
