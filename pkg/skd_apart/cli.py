# -*- coding: utf-8 -*-
"""
Command line front door::

    skd-apart {train,evaluate,gap-series,transfer,sweep} --config PATH
              [--seed N] [--out DIR] [--log-level LEVEL]

Exit status: 0 success, 1 halted or failed run (partial artifacts and a
failure marker in ``manifest.json``), 2 invalid configuration, 3 output
directory locked by another run.
"""
import argparse
import logging
import os
import sys
import time

from . import analysis, artifacts
from .checkpoint import (Checkpoint, checkpoint_path, list_checkpoints,
                         load_checkpoint, load_series, save_checkpoint)
from .config import (GENERATOR_SOURCE, build_arch, build_attack,
                     build_dataset_descriptor, build_train_config,
                     config_hash, load_config)
from .data import load_dataset
from .exceptions import (ImproperlyConfigured, RunDirectoryLocked,
                         SkdApartError, TrainingHalted)
from .models import ResidualNet
from .training import GENERATOR_REGIMES, evaluate, train

logger = logging.getLogger(__name__)

SUBCOMMANDS = ('train', 'evaluate', 'gap-series', 'transfer', 'sweep')

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_LOCKED = range(4)

# start error messages
NO_CHECKPOINTS_MSG = 'No checkpoints found in %s; run "train" first.'

NO_TARGET_MSG = \
    'The transfer subcommand needs analysis.target_checkpoint.'

NO_EPSILONS_MSG = 'The sweep subcommand needs a non-empty analysis.epsilons.'

NO_TRAINING_SOURCE_MSG = \
    'Regime "%s" uses no perturbation; set analysis.source_a.'
# end error messages


class Experiment(object):
    """A validated document plus everything derived from it."""

    def __init__(self, config):
        self.config = config
        self.seed = config['seed']
        self.output_dir = config['output_dir']
        self.train_config = build_train_config(config)
        self.train_set, self.test_set = load_dataset(
            build_dataset_descriptor(config), self.seed)
        self.eval_set = self.test_set.subset(
            config['evaluation']['subset_size'], self.seed)
        self.arch = build_arch(config, self.train_set)

    @property
    def epsilon(self):
        return self.train_config.epsilon

    def new_model(self):
        return ResidualNet(self.arch, seed=self.seed)

    def checkpoint_dir(self):
        return os.path.join(self.output_dir, 'checkpoints')

    def checkpoint_paths(self):
        selection = self.config['analysis']['checkpoints']
        if isinstance(selection, list):
            paths = selection
        else:
            paths = list_checkpoints(selection or self.checkpoint_dir())
        if not paths:
            raise ImproperlyConfigured(NO_CHECKPOINTS_MSG % (
                selection or self.checkpoint_dir()))
        return paths

    def attack(self, document):
        return build_attack(document, self.epsilon, self.seed,
                            self.train_config.clamp_inputs)


def run_train(experiment, run_dir):
    config = experiment.train_config
    net = experiment.new_model()
    metrics_path = run_dir.reset('metrics.jsonl')
    records = []
    layerwise, use_init = GENERATOR_REGIMES.get(config.regime, (True, True))

    def on_epoch(record, state):
        records.append(record)
        artifacts.append_jsonl(metrics_path, record.to_json())
        every = config.checkpoint_every
        if record.epoch == config.epochs or (
                every and record.epoch % every == 0):
            name = checkpoint_path('checkpoints', record.epoch)
            save_checkpoint(run_dir.file(name), Checkpoint(
                experiment.arch, record.epoch, experiment.seed,
                net.params, config.regime, state.generator, state.omega,
                layerwise, use_init))

    try:
        train(config, net, experiment.train_set, experiment.eval_set,
              callback=on_epoch)
    finally:
        columns, rows = artifacts.summary_rows(records)
        artifacts.write_csv(run_dir.file('summary.csv'), columns, rows)
        if config.uses_generator:
            artifacts.write_csv(run_dir.file('step_sizes.csv'),
                                artifacts.STEP_SIZE_COLUMNS,
                                artifacts.step_size_rows(records))
    return None


def run_evaluate(experiment, run_dir):
    path = experiment.config['analysis']['target_checkpoint'] or \
        experiment.checkpoint_paths()[-1]
    checkpoint = load_checkpoint(path)
    results = evaluate(checkpoint.model(), experiment.eval_set,
                       experiment.train_config.eval_attacks,
                       experiment.train_config.eval_batch_size,
                       experiment.seed)
    clean = results.pop('clean')
    document = {'checkpoint': path, 'epoch': checkpoint.epoch,
                'test_clean_acc': clean, 'test_robust_acc': results}
    artifacts.append_jsonl(run_dir.reset('evaluation.jsonl'), document)
    logger.info('evaluated %s: clean=%.4f %s', path, clean, results)
    return None


def run_gap_series(experiment, run_dir):
    settings = experiment.config['analysis']
    checkpoints = load_series(experiment.checkpoint_paths(), experiment.arch)
    source_a = settings['source_a']
    if source_a is None:
        if experiment.train_config.uses_generator:
            source_a = GENERATOR_SOURCE
        else:
            source_a = experiment.train_config.training_attack()
            if source_a is None:
                raise ImproperlyConfigured(NO_TRAINING_SOURCE_MSG %
                                           experiment.train_config.regime)
    elif source_a != GENERATOR_SOURCE:
        source_a = experiment.attack(source_a)
    subset = analysis.evaluation_subset(experiment.train_set,
                                        settings['gap_subset'],
                                        experiment.seed)
    records = analysis.gap_series(
        checkpoints, None if source_a == GENERATOR_SOURCE else source_a,
        experiment.attack(settings['source_b']), subset, experiment.seed,
        experiment.train_config.clamp_inputs)
    artifacts.write_csv(run_dir.file('gap_series.csv'),
                        artifacts.GAP_COLUMNS, artifacts.gap_rows(records))
    return None


def run_transfer(experiment, run_dir):
    settings = experiment.config['analysis']
    if not settings['target_checkpoint']:
        raise ImproperlyConfigured(NO_TARGET_MSG)
    target = load_checkpoint(settings['target_checkpoint']).model()
    checkpoints = load_series(experiment.checkpoint_paths(), experiment.arch)
    rows = analysis.deterioration_curve(
        target, checkpoints, experiment.attack(settings['transfer_attack']),
        experiment.eval_set, experiment.train_config.eval_batch_size,
        experiment.seed)
    artifacts.write_csv(run_dir.file('transfer.csv'),
                        artifacts.TRANSFER_COLUMNS, rows)
    return None


def run_sweep(experiment, run_dir):
    settings = experiment.config['analysis']
    if not settings['epsilons']:
        raise ImproperlyConfigured(NO_EPSILONS_MSG)
    rows = analysis.epsilon_sweep(
        experiment.train_config, settings['epsilons'],
        experiment.attack(settings['sweep_attack']), experiment.new_model,
        experiment.train_set, experiment.eval_set)
    artifacts.write_csv(run_dir.file('sweep.csv'), artifacts.SWEEP_COLUMNS,
                        rows)
    failed = [row for row in rows if row.status != 'completed']
    if failed:
        return '%d of %d sweep cells failed' % (len(failed), len(rows))
    return None


RUNNERS = {
    'train': run_train,
    'evaluate': run_evaluate,
    'gap-series': run_gap_series,
    'transfer': run_transfer,
    'sweep': run_sweep,
}


def run(subcommand, config_path, seed=None, output_dir=None):
    """
    Runs one subcommand end to end.

    :return: process exit status
    """
    started = time.perf_counter()
    try:
        config = load_config(config_path, seed, output_dir)
        experiment = Experiment(config)
    except ImproperlyConfigured as error:
        sys.stderr.write('%s\n' % error)
        return EXIT_CONFIG
    except SkdApartError as error:
        sys.stderr.write('%s\n' % error)
        return EXIT_FAILED

    manifest = {'subcommand': subcommand, 'config_hash': config_hash(config),
                'seed': experiment.seed, 'status': 'completed',
                'failure': None}
    try:
        with artifacts.RunDirectory(experiment.output_dir) as run_dir:
            try:
                failure = RUNNERS[subcommand](experiment, run_dir)
            except TrainingHalted as error:
                if error.record is not None:
                    partial = dict(error.record.to_json(), halted=True)
                    artifacts.append_jsonl(run_dir.file('metrics.jsonl'),
                                           partial)
                failure = str(error)
            except ImproperlyConfigured as error:
                sys.stderr.write('%s\n' % error)
                failure = str(error)
                manifest['status'] = 'invalid'
            except SkdApartError as error:
                failure = '%s: %s' % (type(error).__name__, error)
            except Exception as error:
                logger.exception('%s crashed', subcommand)
                failure = '%s: %s' % (type(error).__name__, error)
            if failure:
                logger.warning('%s failed: %s', subcommand, failure)
                if manifest['status'] == 'completed':
                    manifest['status'] = 'failed'
                manifest['failure'] = failure
            manifest['wall_time'] = time.perf_counter() - started
            run_dir.write_manifest(manifest)
    except RunDirectoryLocked as error:
        sys.stderr.write('%s\n' % error)
        return EXIT_LOCKED

    if manifest['status'] == 'invalid':
        return EXIT_CONFIG
    if manifest['status'] == 'failed':
        return EXIT_FAILED
    logger.info('%s finished in %.2fs', subcommand, manifest['wall_time'])
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog='skd-apart',
        description='Adversarial training and perturbation diagnostics.')
    parser.add_argument('subcommand', choices=SUBCOMMANDS)
    parser.add_argument('--config', required=True,
                        help='experiment document (JSON)')
    parser.add_argument('--seed', type=int, default=None,
                        help='overrides the document seed')
    parser.add_argument('--out', default=None,
                        help='overrides the document output_dir')
    parser.add_argument('--log-level', default='INFO',
                        choices=('DEBUG', 'INFO', 'WARNING', 'ERROR'))
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    return run(args.subcommand, args.config, args.seed, args.out)


if __name__ == '__main__':
    sys.exit(main())
