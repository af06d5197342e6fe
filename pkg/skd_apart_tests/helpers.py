# -*- coding: utf-8 -*-
"""Fixtures shared by the test modules."""
import numpy as np

from skd_apart.data import Dataset
from skd_apart.models import ArchConfig, ResidualNet, TensorObjective
from skd_apart.tensor import forward_op


def linear_objective(w):
    """Per-example loss ``w . x`` on flat inputs."""
    w = np.asarray(w, dtype=np.float64)

    def fn(x_in, labels, params):
        return forward_op('sum', (x_in * params['w'],), axis=1)
    return TensorObjective(fn, w.shape, {'w': w}, name='linear')


def quadratic_objective(dim=1):
    """Per-example loss ``|x|^2``."""
    def fn(x_in, labels, params):
        return forward_op('sum', (x_in * x_in,), axis=1)
    return TensorObjective(fn, (dim,), name='quadratic')


def tiny_preact(seed=0, dim=2, classes=2, width=4, blocks=2, **kwargs):
    return ResidualNet(ArchConfig('micro-preact', (dim,), classes,
                                  width=width, num_blocks=blocks, **kwargs),
                       seed=seed)


def tiny_conv(seed=0, size=4, classes=3, width=2, blocks=1):
    return ResidualNet(ArchConfig('micro-conv', (1, size, size), classes,
                                  width=width, num_blocks=blocks), seed=seed)


def blob_dataset(n=200, seed=0, spread=0.05):
    """Two well separated clusters inside the unit square."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    centers = np.array([[0.25, 0.25], [0.75, 0.75]])
    features = np.clip(centers[labels] + rng.normal(0, spread, (n, 2)),
                       0.0, 1.0)
    return Dataset(features, labels, 2)


def random_batch(shape, classes, n=8, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=(n,) + tuple(shape))
    y = rng.integers(0, classes, size=n)
    return x, y
