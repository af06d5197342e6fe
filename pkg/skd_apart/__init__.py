# -*- coding: utf-8 -*-
"""
Adversarial training lab: a small reverse-mode autodiff core, residual
networks with perturbation taps, FGSM/PGD-style attacks, a learnable
layer-wise perturbation generator and diagnostics of perturbation
strength.
"""
from .attacks import AttackSpec, PerturbationSet, fgsm, pgd, project_linf
from .exceptions import SkdApartError, ImproperlyConfigured
from .generator import GeneratorParams, OmegaStore, apart_step
from .models import ArchConfig, ResidualNet
from .smoke import ExperimentSmokeTestCase
from .tensor import Graph, Tensor, forward_op
from .training import TrainConfig, evaluate, train

__version__ = '0.1.0'

__all__ = [
    'AttackSpec', 'PerturbationSet', 'fgsm', 'pgd', 'project_linf',
    'SkdApartError', 'ImproperlyConfigured', 'GeneratorParams', 'OmegaStore',
    'apart_step', 'ArchConfig', 'ResidualNet', 'ExperimentSmokeTestCase',
    'Graph', 'Tensor', 'forward_op', 'TrainConfig', 'evaluate', 'train',
]
