# -*- coding: utf-8 -*-
from unittest import TestCase

import numpy as np
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from skd_apart.attacks import (AttackSpec, PerturbationSet, correct_count,
                               f_plus_fgsm, fgsm, noise, perturbed_losses,
                               pgd, project_linf)
from skd_apart.exceptions import (BoundViolation, ImproperlyConfigured,
                                  NonFiniteError)
from skd_apart.models import TensorObjective
from skd_apart.tensor import forward_op

from .helpers import (linear_objective, quadratic_objective, random_batch,
                      tiny_conv, tiny_preact)


class ProjectionTestCase(TestCase):

    def test_examples(self):
        np.testing.assert_array_equal(
            project_linf(np.array([0.5, -0.2, 0.05]), 0.1), [0.1, -0.1, 0.05])
        np.testing.assert_array_equal(project_linf(np.array([0.3]), 0.0),
                                      [0.0])

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.integers(1, 20),
                  elements=st.floats(-10, 10)),
           st.floats(0.0, 5.0))
    def test_idempotent_and_bounded(self, delta, epsilon):
        once = project_linf(delta, epsilon)
        np.testing.assert_array_equal(project_linf(once, epsilon), once)
        self.assertLessEqual(np.max(np.abs(once)), epsilon)


class PerturbationSetTestCase(TestCase):

    def test_bound_is_checked(self):
        with self.assertRaises(BoundViolation):
            PerturbationSet(np.array([0.2]), epsilon=0.1, provenance='test')

    def test_unbounded(self):
        self.assertEqual(PerturbationSet(np.array([-3.0, 2.0])).linf_norm,
                         3.0)

    def test_input_only(self):
        full = PerturbationSet(np.zeros((1, 2)), [np.ones((1, 4))], 'apart',
                               0.1)
        self.assertIsNone(full.input_only().block_deltas)


class AttackSpecTestCase(TestCase):

    def test_defaults(self):
        spec = AttackSpec('pgd', 0.1, steps=7)
        self.assertEqual((spec.name, spec.init), ('pgd-7', 'uniform'))
        self.assertAlmostEqual(spec.resolved_step_size, 0.025)
        self.assertEqual(AttackSpec('fgsm', 0.1).init, 'zero')

    def test_errors(self):
        for kwargs in ({'kind': 'deepfool', 'epsilon': 0.1},
                       {'kind': 'fgsm', 'epsilon': -0.1},
                       {'kind': 'pgd', 'epsilon': 0.1, 'steps': -1},
                       {'kind': 'pgd', 'epsilon': 0.1, 'step_size': 0},
                       {'kind': 'pgd', 'epsilon': 0.1, 'init': 'normal'}):
            with self.assertRaises(ImproperlyConfigured):
                AttackSpec(**kwargs)


class FgsmTestCase(TestCase):

    def test_linear_objective(self):
        model = linear_objective([1.0, -1.0])
        result = fgsm(model, np.array([[0.3, 0.7]]), np.array([0]), 0.1)
        np.testing.assert_array_equal(result.input_delta, [[0.1, -0.1]])
        self.assertEqual(result.provenance, 'fgsm')

    def test_zero_gradient_gives_zero(self):
        model = linear_objective([0.0, 2.0])
        result = fgsm(model, np.array([[0.3, 0.7]]), np.array([0]), 0.1)
        np.testing.assert_array_equal(result.input_delta, [[0.0, 0.1]])

    def test_each_row_uses_its_own_loss(self):
        model = quadratic_objective(dim=1)
        result = fgsm(model, np.array([[-0.5], [0.5]]), np.array([0, 0]),
                      0.1)
        np.testing.assert_array_equal(result.input_delta, [[-0.1], [0.1]])

    def test_clamped_to_pixels(self):
        model = linear_objective([1.0, -1.0])
        result = fgsm(model, np.array([[0.95, 0.02]]), np.array([0]), 0.1,
                      clamp_inputs=True)
        np.testing.assert_allclose(result.input_delta, [[0.05, -0.02]])

    def test_equals_single_zero_start_pgd_step(self):
        net = tiny_preact(seed=2)
        x, y = random_batch((2,), 2, n=16)
        spec = AttackSpec('pgd', 0.1, steps=1, step_size=0.1, init='zero')
        np.testing.assert_array_equal(fgsm(net, x, y, 0.1).input_delta,
                                      pgd(net, x, y, spec).input_delta)

    def test_non_finite_gradient(self):
        def fn(x_in, labels, params):
            return forward_op('sum', (x_in * params['w'],), axis=1)
        model = TensorObjective(fn, (2,), {'w': [np.inf, 1.0]})
        with self.assertRaises(NonFiniteError) as cm:
            fgsm(model, np.array([[0.1, 0.2], [0.3, 0.4]]),
                 np.array([0, 0]), 0.1)
        self.assertEqual(cm.exception.index, 0)

    def test_increases_loss_of_a_network(self):
        net = tiny_preact(seed=0)
        x, y = random_batch((2,), 2, n=32, seed=1)
        delta = fgsm(net, x, y, 0.05)
        self.assertGreater(perturbed_losses(net, x, y, delta).mean(),
                           perturbed_losses(net, x, y).mean())

    def test_ascends_on_almost_every_random_network(self):
        ascents = 0
        for seed in range(100):
            net = tiny_preact(seed=seed)
            x, y = random_batch((2,), 2, n=16, seed=seed)
            delta = fgsm(net, x, y, 0.05)
            ascents += perturbed_losses(net, x, y, delta).mean() >= \
                perturbed_losses(net, x, y).mean()
        self.assertGreaterEqual(ascents, 95)


class PgdTestCase(TestCase):

    def test_one_dimensional_trajectory(self):
        model = quadratic_objective(dim=1)
        x, y = np.array([[0.5]]), np.array([0])
        expected = {1: 0.1, 2: 0.2, 3: 0.3, 5: 0.3}
        for steps, value in expected.items():
            spec = AttackSpec('pgd', 0.3, steps=steps, step_size=0.1,
                              init='zero')
            self.assertAlmostEqual(pgd(model, x, y, spec).input_delta.item(),
                                   value, places=12)

    def test_zero_steps(self):
        spec = AttackSpec('pgd', 0.3, steps=0)
        result = pgd(tiny_preact(), np.ones((2, 2)), np.array([0, 1]), spec)
        np.testing.assert_array_equal(result.input_delta, np.zeros((2, 2)))

    def test_seeded(self):
        net = tiny_conv(seed=1)
        x, y = random_batch((1, 4, 4), 3, n=4)
        spec = AttackSpec('pgd', 0.1, steps=3)
        first = spec.perturb(net, x, y, seed=[0, 1])
        self.assertEqual(first.input_delta.tobytes(),
                         spec.perturb(net, x, y, seed=[0, 1])
                         .input_delta.tobytes())
        self.assertNotEqual(first.input_delta.tobytes(),
                            spec.perturb(net, x, y, seed=[0, 2])
                            .input_delta.tobytes())
        self.assertLessEqual(first.linf_norm, 0.1)

    def test_keeps_the_best_iterate(self):
        # loss -x^2 makes sign steps overshoot the maximum at x = 0
        def fn(x_in, labels, params):
            return forward_op('sum', (x_in * x_in * -1.0,), axis=1)
        model = TensorObjective(fn, (1,))
        spec = AttackSpec('pgd', 0.3, steps=3, step_size=0.1, init='zero')
        result = pgd(model, np.array([[0.03]]), np.array([0]), spec)
        self.assertEqual(result.input_delta.item(), 0.0)

    def test_fgsm_start_never_ends_below_fgsm(self):
        spec = AttackSpec('pgd', 0.1, steps=20, init='fgsm')
        for seed in range(10):
            net = tiny_preact(seed=seed)
            x, y = random_batch((2,), 2, n=10, seed=seed)
            fgsm_losses = perturbed_losses(net, x, y, fgsm(net, x, y, 0.1))
            pgd_losses = perturbed_losses(net, x, y,
                                          spec.perturb(net, x, y, seed=seed))
            self.assertTrue(np.all(pgd_losses >= fgsm_losses - 1e-12))


class RandomStartTestCase(TestCase):

    def test_f_plus_fgsm(self):
        net = tiny_preact(seed=3)
        x, y = random_batch((2,), 2, n=8)
        first = f_plus_fgsm(net, x, y, 0.1, seed=5)
        second = f_plus_fgsm(net, x, y, 0.1, seed=5)
        self.assertEqual(first.input_delta.tobytes(),
                         second.input_delta.tobytes())
        self.assertLessEqual(first.linf_norm, 0.1)
        self.assertEqual(first.provenance, 'f-plus-fgsm')

    def test_random_sign(self):
        result = noise('random-sign', (50, 3), 0.2, seed=0)
        self.assertTrue(np.all(np.abs(result.input_delta) == 0.2))

    def test_gaussian(self):
        result = noise('gaussian', (2000,), 0.2, seed=0)
        self.assertLessEqual(result.linf_norm, 0.2)
        self.assertAlmostEqual(np.std(result.input_delta), 0.1, delta=0.01)

    def test_noise_is_centred(self):
        for kind in ('random-sign', 'gaussian'):
            delta = noise(kind, (10000,), 0.2, seed=0).input_delta
            sigma = np.std(delta) / np.sqrt(delta.size)
            self.assertLessEqual(abs(np.mean(delta)), 3 * sigma)

    def test_noise_through_spec_ignores_model(self):
        spec = AttackSpec('random-sign', 0.1)
        x, y = random_batch((2,), 2, n=4)
        a = spec.perturb(tiny_preact(seed=0), x, y, seed=9)
        b = spec.perturb(tiny_preact(seed=1), x, y, seed=9)
        np.testing.assert_array_equal(a.input_delta, b.input_delta)

    def test_unknown_noise(self):
        with self.assertRaises(ImproperlyConfigured):
            noise('fgsm', (2,), 0.1, seed=0)


class AccuracyTestCase(TestCase):

    def test_zero_perturbation_matches_clean(self):
        net = tiny_preact(seed=4)
        x, y = random_batch((2,), 2, n=20)
        zero = PerturbationSet(np.zeros(x.shape), epsilon=0.0)
        self.assertEqual(correct_count(net, x, y, zero),
                         correct_count(net, x, y))
