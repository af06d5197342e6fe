# -*- coding: utf-8 -*-
import io
import json
import os
import shutil
import tempfile
from unittest import TestCase

from mock import patch

from skd_apart import artifacts
from skd_apart.cli import (EXIT_CONFIG, EXIT_FAILED, EXIT_LOCKED, EXIT_OK,
                           NO_EPSILONS_MSG, main, run)
from skd_apart.exceptions import NonFiniteError


EXPERIMENT = {
    'seed': 1,
    'dataset': {'kind': 'synthetic-moons', 'n_samples': 80},
    'model': {'arch': 'micro-preact', 'width': 4, 'num_blocks': 1},
    'training': {'regime': 'apart', 'epochs': 3, 'batch_size': 20,
                 'epsilon': 0.05, 'lr_max': 0.1},
    'generator': {'mu_alpha_max': 1e-3},
    'evaluation': {'attacks': [{'kind': 'fgsm'}], 'batch_size': 32},
    'analysis': {'source_b': {'kind': 'pgd', 'steps': 3, 'init': 'zero'},
                 'gap_subset': 20},
}


def read(path, mode='r'):
    with open(path, mode) as handle:
        return handle.read()


class CliTestCase(TestCase):

    def setUp(self):
        self.directory = tempfile.mkdtemp(prefix='skd-apart-cli-')
        self.addCleanup(shutil.rmtree, self.directory, True)
        self.out = os.path.join(self.directory, 'run')
        stderr = patch('sys.stderr', new_callable=io.StringIO)
        self.stderr = stderr.start()
        self.addCleanup(stderr.stop)

    def config(self, name='experiment.json', **sections):
        document = json.loads(json.dumps(EXPERIMENT))
        for section, values in sections.items():
            document[section].update(values)
        path = os.path.join(self.directory, name)
        with open(path, 'w') as handle:
            json.dump(document, handle)
        return path

    def run_command(self, subcommand, path=None, out=None):
        return run(subcommand, path or self.config(),
                   output_dir=out or self.out)

    def output(self, name, out=None):
        return os.path.join(out or self.out, name)

    def manifest(self, out=None):
        return json.loads(read(self.output(artifacts.MANIFEST_NAME, out)))


class TrainCommandTestCase(CliTestCase):

    def test_artifacts(self):
        self.assertEqual(self.run_command('train'), EXIT_OK)
        metrics = artifacts.read_jsonl(self.output('metrics.jsonl'))
        self.assertEqual([row['epoch'] for row in metrics], [1, 2, 3])
        self.assertNotIn('wall_time', metrics[0])
        self.assertEqual(len(metrics[0]['alpha']), 2)

        manifest = self.manifest()
        self.assertEqual(manifest['status'], 'completed')
        self.assertIsNone(manifest['failure'])
        self.assertEqual(manifest['seed'], 1)
        self.assertIn('wall_time', manifest)
        self.assertEqual(manifest['artifacts'], sorted([
            'metrics.jsonl', 'summary.csv', 'step_sizes.csv',
            os.path.join('checkpoints', 'epoch_0001.json'),
            os.path.join('checkpoints', 'epoch_0002.json'),
            os.path.join('checkpoints', 'epoch_0003.json')]))
        self.assertFalse(os.path.exists(self.output(artifacts.LOCK_NAME)))

        summary = read(self.output('summary.csv')).splitlines()
        self.assertEqual(summary[0], 'epoch,train_loss,train_robust_acc,'
                                     'test_clean_acc,fgsm')
        self.assertEqual(len(summary), 4)
        step_sizes = read(self.output('step_sizes.csv')).splitlines()
        self.assertEqual(step_sizes[0], 'epoch,site,alpha')
        self.assertEqual(len(step_sizes), 1 + 3 * 3)

    def test_fgsm_metrics_rows(self):
        path = self.config(training={'regime': 'fgsm', 'epochs': 5})
        self.assertEqual(self.run_command('train', path), EXIT_OK)
        metrics = artifacts.read_jsonl(self.output('metrics.jsonl'))
        self.assertEqual(len(metrics), 5)
        self.assertIsNone(metrics[-1]['alpha'])
        self.assertNotIn('step_sizes.csv', self.manifest()['artifacts'])

    def test_output_is_deterministic(self):
        other = os.path.join(self.directory, 'again')
        path = self.config()
        self.assertEqual(self.run_command('train', path), EXIT_OK)
        self.assertEqual(self.run_command('train', path, other), EXIT_OK)
        for name in ('metrics.jsonl', 'summary.csv', 'step_sizes.csv',
                     os.path.join('checkpoints', 'epoch_0003.json')):
            self.assertEqual(read(self.output(name), 'rb'),
                             read(self.output(name, other), 'rb'))
        self.assertEqual(self.manifest()['config_hash'],
                         self.manifest(other)['config_hash'])

    def test_checkpoint_every(self):
        path = self.config(training={'checkpoint_every': 2})
        self.assertEqual(self.run_command('train', path), EXIT_OK)
        self.assertEqual(sorted(os.listdir(self.output('checkpoints'))),
                         ['epoch_0002.json', 'epoch_0003.json'])

    @patch('skd_apart.training.parameter_gradients',
           side_effect=NonFiniteError('gradient is nan', 3))
    def test_halted_run(self, parameter_gradients):
        path = self.config(training={'regime': 'fgsm'})
        self.assertEqual(self.run_command('train', path), EXIT_FAILED)
        manifest = self.manifest()
        self.assertEqual(manifest['status'], 'failed')
        self.assertIn('gradient is nan', manifest['failure'])
        metrics = artifacts.read_jsonl(self.output('metrics.jsonl'))
        self.assertEqual(len(metrics), 1)
        self.assertTrue(metrics[0]['halted'])
        self.assertFalse(os.path.exists(self.output(artifacts.LOCK_NAME)))

    @patch('skd_apart.cli.save_checkpoint',
           side_effect=OSError(28, 'No space left on device'))
    def test_unexpected_error_is_recorded(self, save_checkpoint):
        self.assertEqual(self.run_command('train'), EXIT_FAILED)
        manifest = self.manifest()
        self.assertEqual(manifest['status'], 'failed')
        self.assertEqual(manifest['failure'],
                         'OSError: [Errno 28] No space left on device')
        self.assertIn('summary.csv', manifest['artifacts'])
        self.assertFalse(os.path.exists(self.output(artifacts.LOCK_NAME)))


class AnalysisCommandsTestCase(CliTestCase):

    def setUp(self):
        super(AnalysisCommandsTestCase, self).setUp()
        self.assertEqual(self.run_command('train'), EXIT_OK)

    def test_evaluate_reproduces_final_metrics(self):
        self.assertEqual(self.run_command('evaluate'), EXIT_OK)
        final = artifacts.read_jsonl(self.output('metrics.jsonl'))[-1]
        evaluation, = artifacts.read_jsonl(self.output('evaluation.jsonl'))
        self.assertEqual(evaluation['epoch'], 3)
        self.assertEqual(evaluation['test_clean_acc'], final['test_clean_acc'])
        self.assertEqual(evaluation['test_robust_acc'],
                         final['test_robust_acc'])

    def test_gap_series(self):
        self.assertEqual(self.run_command('gap-series'), EXIT_OK)
        lines = read(self.output('gap_series.csv')).splitlines()
        self.assertEqual(lines[0], 'epoch,gap,loss_A,loss_B')
        self.assertEqual([line.split(',')[0] for line in lines[1:]],
                         ['1', '2', '3'])

    def test_transfer(self):
        target = self.output(os.path.join('checkpoints', 'epoch_0003.json'))
        path = self.config('transfer.json',
                           analysis={'target_checkpoint': target})
        self.assertEqual(self.run_command('transfer', path), EXIT_OK)
        lines = read(self.output('transfer.csv')).splitlines()
        self.assertEqual(lines[0], 'epoch,transfer_acc,noise_acc')
        self.assertEqual(len(lines), 4)

    def test_transfer_needs_target(self):
        self.assertEqual(self.run_command('transfer'), EXIT_CONFIG)
        self.assertEqual(self.manifest()['status'], 'invalid')


class SweepCommandTestCase(CliTestCase):

    def test_rows(self):
        path = self.config(training={'epochs': 1},
                           analysis={'epsilons': [0.0, 0.02]})
        self.assertEqual(self.run_command('sweep', path), EXIT_OK)
        lines = read(self.output('sweep.csv')).splitlines()
        self.assertEqual(lines[0],
                         'epsilon_train,clean_acc,robust_acc,status')
        self.assertEqual([line.split(',')[-1] for line in lines[1:]],
                         ['completed', 'completed'])

    def test_without_epsilons(self):
        self.assertEqual(self.run_command('sweep'), EXIT_CONFIG)
        self.assertIn(NO_EPSILONS_MSG, self.stderr.getvalue())


class ExitStatusTestCase(CliTestCase):

    def test_invalid_document(self):
        path = self.config(training={'epochs': 0})
        self.assertEqual(self.run_command('train', path), EXIT_CONFIG)
        self.assertIn('"training.epochs"', self.stderr.getvalue())
        self.assertFalse(os.path.exists(self.out))

    def test_locked_directory(self):
        os.makedirs(self.out)
        lock = self.output(artifacts.LOCK_NAME)
        with open(lock, 'w') as handle:
            handle.write('1\n')
        self.assertEqual(self.run_command('train'), EXIT_LOCKED)
        self.assertTrue(os.path.exists(lock))
        self.assertFalse(os.path.exists(self.output('metrics.jsonl')))

    @patch('skd_apart.cli.run', return_value=EXIT_OK)
    def test_main_passes_arguments(self, run_mock):
        self.assertEqual(main(['gap-series', '--config', 'x.json',
                               '--seed', '4', '--out', 'elsewhere']), EXIT_OK)
        run_mock.assert_called_once_with('gap-series', 'x.json', 4,
                                         'elsewhere')
