# -*- coding: utf-8 -*-
"""
Files a run leaves in its output directory. The directory is owned by
one process at a time through an exclusive lock file.
"""
import csv
import errno
import json
import logging
import os

from .exceptions import RunDirectoryLocked

logger = logging.getLogger(__name__)

LOCK_NAME = '.lock'

MANIFEST_NAME = 'manifest.json'

GAP_COLUMNS = ('epoch', 'gap', 'loss_A', 'loss_B')

TRANSFER_COLUMNS = ('epoch', 'transfer_acc', 'noise_acc')

SWEEP_COLUMNS = ('epsilon_train', 'clean_acc', 'robust_acc', 'status')

STEP_SIZE_COLUMNS = ('epoch', 'site', 'alpha')

SUMMARY_COLUMNS = ('epoch', 'train_loss', 'train_robust_acc',
                   'test_clean_acc')

# start error messages
LOCKED_MSG = \
    'Output directory %s is in use by another run (lock file %s exists).'
# end error messages


class RunDirectory(object):
    """
    Context manager owning ``path`` for the duration of a run. Relative
    artifact names are collected for the manifest.
    """

    def __init__(self, path):
        self.path = path
        self.lock_path = os.path.join(path, LOCK_NAME)
        self.artifacts = []

    def __enter__(self):
        os.makedirs(self.path, exist_ok=True)
        try:
            descriptor = os.open(self.lock_path,
                                 os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except OSError as error:
            if error.errno == errno.EEXIST:
                raise RunDirectoryLocked(LOCKED_MSG % (
                    self.path, self.lock_path))
            raise
        with os.fdopen(descriptor, 'w') as handle:
            handle.write('%d\n' % os.getpid())
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        try:
            os.remove(self.lock_path)
        except OSError:
            logger.warning('could not remove lock file %s', self.lock_path)
        return False

    def file(self, name):
        """Absolute path of artifact ``name``, registered once."""
        if name not in self.artifacts:
            self.artifacts.append(name)
        path = os.path.join(self.path, name)
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        return path

    def reset(self, name):
        path = self.file(name)
        if os.path.exists(path):
            os.remove(path)
        return path

    def write_manifest(self, manifest):
        manifest = dict(manifest, artifacts=sorted(self.artifacts))
        path = os.path.join(self.path, MANIFEST_NAME)
        with open(path, 'w') as handle:
            json.dump(manifest, handle, indent=2, sort_keys=True)
            handle.write('\n')
        return path


def append_jsonl(path, document):
    with open(path, 'a') as handle:
        handle.write(json.dumps(document, sort_keys=True) + '\n')


def read_jsonl(path):
    with open(path) as handle:
        return [json.loads(line) for line in handle if line.strip()]


def write_csv(path, columns, rows):
    with open(path, 'w', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v
                             for v in row])
    logger.info('wrote %s (%d rows)', path, len(rows))
    return path


def summary_rows(records):
    """
    :return: ``(columns, rows)``; one accuracy column per evaluation
        attack, in name order
    """
    attacks = sorted(set(name for record in records
                         for name in record.test_robust_acc))
    rows = [[record.epoch, record.train_loss, record.train_robust_acc,
             record.test_clean_acc]
            + [record.test_robust_acc.get(name) for name in attacks]
            for record in records]
    return SUMMARY_COLUMNS + tuple(attacks), rows


def step_size_rows(records):
    rows = []
    for record in records:
        for site, alpha in enumerate(record.alpha or (), 1):
            rows.append([record.epoch, site, alpha])
        if record.alpha_omega is not None:
            rows.append([record.epoch, 'omega', record.alpha_omega])
    return rows


def gap_rows(records):
    return [[r.epoch, r.gap, r.loss_a, r.loss_b] for r in records]
