# -*- coding: utf-8 -*-
"""
Non-learned perturbation generators: FGSM, PGD-N, F+FGSM and random
noise, plus the L-infinity projection. All of them are pure functions of
the model snapshot, the batch and a seed.
"""
import logging
from dataclasses import dataclass, asdict

import numpy as np

from .exceptions import ImproperlyConfigured, NonFiniteError, BoundViolation
from .tensor import Graph, Tensor, forward_op

logger = logging.getLogger(__name__)

ATTACK_KINDS = ('fgsm', 'pgd', 'f-plus-fgsm', 'random-sign', 'gaussian')

INIT_KINDS = ('zero', 'uniform', 'fgsm')

# F+FGSM takes one step of this multiple of epsilon from a random start
F_PLUS_FGSM_STEP_RATIO = 1.25

# default PGD step as a fraction of epsilon
PGD_STEP_RATIO = 0.25

# relative slack for the post-hoc bound check (pixel clamping rounds)
BOUND_TOLERANCE = 1e-12

# start error messages
UNKNOWN_ATTACK_MSG = 'Unknown attack kind "%s"; expected one of %s.'

UNKNOWN_INIT_MSG = 'Unknown attack initialization "%s"; expected one of %s.'

NEGATIVE_EPSILON_MSG = 'Attack epsilon must be >= 0 but is %r.'

NEGATIVE_STEPS_MSG = 'Attack steps must be >= 0 but is %r.'

NON_POSITIVE_STEP_SIZE_MSG = 'Attack step size must be > 0 but is %r.'

NON_FINITE_GRADIENT_MSG = \
    'Input gradient is not finite for batch element %d.'

BOUND_VIOLATION_MSG = \
    'Perturbation from %s has L-inf norm %r above its bound %r.'
# end error messages


@dataclass
class PerturbationSet(object):
    """
    Perturbations produced by one generator call: ``input_delta`` for the
    model input and, for layer-wise generators, one array per residual
    block. ``epsilon`` is the L-inf bound the input perturbation satisfies
    by construction (``None`` when unbounded); it is checked on creation.
    """
    input_delta: np.ndarray
    block_deltas: list = None
    provenance: str = ''
    epsilon: float = None
    site_signs: list = None

    def __post_init__(self):
        self.input_delta = np.asarray(self.input_delta, dtype=np.float64)
        if self.epsilon is not None and self.input_delta.size:
            norm = float(np.max(np.abs(self.input_delta)))
            if norm > self.epsilon * (1 + BOUND_TOLERANCE) + BOUND_TOLERANCE:
                raise BoundViolation(BOUND_VIOLATION_MSG % (
                    self.provenance, norm, self.epsilon))

    @property
    def linf_norm(self):
        if not self.input_delta.size:
            return 0.0
        return float(np.max(np.abs(self.input_delta)))

    def input_only(self):
        return PerturbationSet(self.input_delta, None, self.provenance,
                               self.epsilon)


@dataclass
class AttackSpec(object):
    """
    Declarative description of a non-learned generator.

    :param kind: one of ``ATTACK_KINDS``
    :param epsilon: L-inf budget on the [0, 1] pixel scale
    :param steps: PGD iterations
    :param step_size: per-iteration magnitude; PGD defaults to
        ``epsilon / 4``, F+FGSM to ``1.25 * epsilon``
    :param init: ``zero``, ``uniform`` (in the epsilon ball) or ``fgsm``
        (the FGSM corner); PGD defaults to ``uniform``
    :param seed: RNG seed for random initializations and noise
    :param clamp_inputs: keep ``x + delta`` inside [0, 1]
    """
    kind: str
    epsilon: float
    steps: int = 0
    step_size: float = None
    init: str = None
    seed: int = 0
    clamp_inputs: bool = False

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ImproperlyConfigured(UNKNOWN_ATTACK_MSG % (
                self.kind, ', '.join(ATTACK_KINDS)))
        if self.epsilon < 0:
            raise ImproperlyConfigured(NEGATIVE_EPSILON_MSG % self.epsilon)
        if self.steps < 0:
            raise ImproperlyConfigured(NEGATIVE_STEPS_MSG % self.steps)
        if self.step_size is not None and self.step_size <= 0:
            raise ImproperlyConfigured(
                NON_POSITIVE_STEP_SIZE_MSG % self.step_size)
        if self.init is None:
            self.init = 'uniform' if self.kind == 'pgd' else 'zero'
        if self.init not in INIT_KINDS:
            raise ImproperlyConfigured(UNKNOWN_INIT_MSG % (
                self.init, ', '.join(INIT_KINDS)))

    @property
    def name(self):
        if self.kind == 'pgd':
            return 'pgd-%d' % self.steps
        return self.kind

    @property
    def resolved_step_size(self):
        if self.step_size is not None:
            return self.step_size
        if self.kind == 'f-plus-fgsm':
            return F_PLUS_FGSM_STEP_RATIO * self.epsilon
        return PGD_STEP_RATIO * self.epsilon

    def to_dict(self):
        return asdict(self)

    def perturb(self, model, x, y, idx=None, seed=None):
        """
        Generates perturbations for the batch ``(x, y)``.

        :param idx: dataset indices of the batch (unused, kept so every
            perturbation source shares one call signature)
        :param seed: overrides ``self.seed``
        """
        seed = self.seed if seed is None else seed
        if self.kind == 'fgsm':
            return fgsm(model, x, y, self.epsilon, self.clamp_inputs)
        if self.kind == 'pgd':
            return pgd(model, x, y, self, seed)
        if self.kind == 'f-plus-fgsm':
            return f_plus_fgsm(model, x, y, self.epsilon, seed,
                               self.clamp_inputs, self.step_size)
        delta = noise(self.kind, np.shape(x), self.epsilon, seed).input_delta
        if self.clamp_inputs:
            delta = clamp_to_pixels(x, delta)
        return PerturbationSet(delta, provenance=self.name,
                               epsilon=self.epsilon)


def project_linf(delta, epsilon):
    """Clamps every coordinate of ``delta`` to ``[-epsilon, epsilon]``."""
    return np.clip(delta, -epsilon, epsilon)


def clamp_to_pixels(x, delta):
    """Shrinks ``delta`` so that ``x + delta`` stays in [0, 1]."""
    return np.clip(x + delta, 0.0, 1.0) - x


def input_gradient(model, x, y, block_deltas=None):
    """
    Per-example losses and ``dL/dx`` of the summed loss, so each row holds
    the gradient of its own example's loss.

    :raises: ``NonFiniteError`` naming the first batch element whose
        gradient is not finite
    """
    graph = Graph()
    x_in = graph.variable(x, name='input')
    losses, _, _ = model.per_example_loss(x_in, y, block_deltas)
    graph.backward(forward_op('sum', (losses,)))
    grad = np.zeros(x_in.shape) if x_in.grad is None else x_in.grad
    finite = np.isfinite(grad.reshape(grad.shape[0], -1)).all(axis=1)
    if not finite.all():
        index = int(np.argmin(finite))
        raise NonFiniteError(NON_FINITE_GRADIENT_MSG % index, index)
    return losses.data, grad


def fgsm(model, x, y, epsilon, clamp_inputs=False):
    """``delta = epsilon * sign(dL/dx)``, with ``sign(0) = 0``."""
    x = np.asarray(x, dtype=np.float64)
    _, grad = input_gradient(model, x, y)
    delta = project_linf(epsilon * np.sign(grad), epsilon)
    if clamp_inputs:
        delta = clamp_to_pixels(x, delta)
    return PerturbationSet(delta, provenance='fgsm', epsilon=epsilon)


def _keep_best(best, best_losses, delta, losses):
    better = losses > best_losses
    mask = better.reshape((-1,) + (1,) * (delta.ndim - 1))
    return np.where(mask, delta, best), np.where(better, losses, best_losses)


def pgd(model, x, y, spec, seed=None):
    """
    ``spec.steps`` iterations of projected sign ascent from a zero,
    uniform or FGSM start; zero iterations give a zero perturbation.

    Every example keeps the iterate with its highest loss. The start only
    competes when it is the FGSM corner, so a single step from zero is
    exactly FGSM and an FGSM start never ends below FGSM.
    """
    x = np.asarray(x, dtype=np.float64)
    epsilon = spec.epsilon
    if spec.steps == 0:
        return PerturbationSet(np.zeros(x.shape), provenance=spec.name,
                               epsilon=epsilon)

    rng = np.random.default_rng(spec.seed if seed is None else seed)
    if spec.init == 'uniform':
        delta = rng.uniform(-epsilon, epsilon, size=x.shape)
    elif spec.init == 'fgsm':
        delta = fgsm(model, x, y, epsilon).input_delta
    else:
        delta = np.zeros(x.shape)
    if spec.clamp_inputs:
        delta = clamp_to_pixels(x, delta)

    best, best_losses = delta, np.full(len(x), -np.inf)
    step = spec.resolved_step_size
    for iteration in range(spec.steps):
        losses, grad = input_gradient(model, x + delta, y)
        if iteration or spec.init == 'fgsm':
            best, best_losses = _keep_best(best, best_losses, delta, losses)
        delta = project_linf(delta + step * np.sign(grad), epsilon)
        if spec.clamp_inputs:
            delta = clamp_to_pixels(x, delta)
    losses, _, _ = model.per_example_loss(Tensor(x + delta), y)
    best, _ = _keep_best(best, best_losses, delta, losses.data)
    return PerturbationSet(best, provenance=spec.name, epsilon=epsilon)


def f_plus_fgsm(model, x, y, epsilon, seed, clamp_inputs=False,
                step_size=None):
    """
    Uniform start in the epsilon ball, one sign step of ``1.25 *
    epsilon``, projection back into the ball.
    """
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(seed)
    start = rng.uniform(-epsilon, epsilon, size=x.shape)
    if clamp_inputs:
        start = clamp_to_pixels(x, start)
    if step_size is None:
        step_size = F_PLUS_FGSM_STEP_RATIO * epsilon

    _, grad = input_gradient(model, x + start, y)
    delta = project_linf(start + step_size * np.sign(grad), epsilon)
    if clamp_inputs:
        delta = clamp_to_pixels(x, delta)
    return PerturbationSet(delta, provenance='f-plus-fgsm', epsilon=epsilon)


def noise(kind, shape, epsilon, seed):
    """
    ``random-sign``: ``epsilon * sign(u)`` with ``u ~ U[-1, 1]``;
    ``gaussian``: ``N(0, (epsilon / 2)^2)`` clipped to the epsilon ball.
    """
    rng = np.random.default_rng(seed)
    if kind == 'random-sign':
        delta = epsilon * np.sign(rng.uniform(-1.0, 1.0, size=shape))
    elif kind == 'gaussian':
        delta = project_linf(rng.normal(0.0, epsilon / 2.0, size=shape),
                             epsilon)
    else:
        raise ImproperlyConfigured(UNKNOWN_ATTACK_MSG % (
            kind, 'random-sign, gaussian'))
    return PerturbationSet(delta, provenance=kind, epsilon=epsilon)


def perturbed_inputs(x, perturbation):
    if perturbation is None:
        return np.asarray(x, dtype=np.float64), None
    return x + perturbation.input_delta, perturbation.block_deltas


def perturbed_losses(model, x, y, perturbation=None):
    """Per-example losses of ``model`` at ``x`` plus ``perturbation``."""
    x_adv, block_deltas = perturbed_inputs(x, perturbation)
    losses, _, _ = model.per_example_loss(Tensor(x_adv), y, block_deltas)
    return losses.data


def predictions(net, x, perturbation=None):
    x_adv, block_deltas = perturbed_inputs(x, perturbation)
    return np.argmax(net.predict(x_adv, block_deltas), axis=1)


def correct_count(net, x, y, perturbation=None):
    return int(np.sum(predictions(net, x, perturbation) == y))
