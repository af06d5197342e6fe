# -*- coding: utf-8 -*-
"""
Experiment documents: one JSON file per experiment, validated completely
before any computation starts.
"""
import copy
import hashlib
import json
import logging
import numbers

from .attacks import ATTACK_KINDS, INIT_KINDS, AttackSpec
from .analysis import ORACLE_MODES, DEFAULT_ORACLE_BUDGET, BruteForceOracle
from .data import DATASET_KINDS, DatasetDescriptor
from .exceptions import ImproperlyConfigured
from .generator import AUTO, OMEGA_INITS
from .models import ARCHITECTURES, ArchConfig
from .training import REGIMES, GeneratorConfig, TrainConfig

logger = logging.getLogger(__name__)

REQUIRED = object()

ORACLE_KIND = 'oracle'

GENERATOR_SOURCE = 'generator'

# start configuration error messages
INCORRECT_DOCUMENT_MSG = \
    'skd-apart: experiment document must be a JSON object but is %s.'

UNSUPPORTED_KEYS_MSG = \
    'skd-apart: section "%s" does not support those keys: %s.'

MISSING_KEY_MSG = 'skd-apart: section "%s" requires the key "%s".'

INCORRECT_PARAM_TYPE_MSG = \
    'skd-apart: parameter "%s.%s" should be %s but is %s with next ' \
    'value: %r.'

INCORRECT_SECTION_TYPE_MSG = \
    'skd-apart: section "%s" should be an object but is %s.'

UNREADABLE_DOCUMENT_MSG = 'skd-apart: cannot read experiment document %s: %s'

LINK_TO_DOCUMENTATION = \
    'For more information please refer to the Configuration section of ' \
    'README.rst.'
# end configuration error messages


def check_type(types):
    def check(obj):
        return isinstance(obj, types) and not isinstance(obj, bool)
    return check


def is_bool(obj):
    return isinstance(obj, bool)


def is_number(obj):
    return isinstance(obj, numbers.Real) and not isinstance(obj, bool)


def in_range(low=None, high=None, integer=False, low_open=False,
             high_open=False):
    def check(obj):
        if not (check_type(numbers.Integral)(obj) if integer
                else is_number(obj)):
            return False
        if low is not None and (obj <= low if low_open else obj < low):
            return False
        if high is not None and (obj >= high if high_open else obj > high):
            return False
        return True
    return check


def one_of(*choices):
    def check(obj):
        return obj in choices
    return check


def or_null(function):
    def check(obj):
        return obj is None or function(obj)
    return check


def list_of(function):
    def check(obj):
        return isinstance(obj, list) and all(function(item) for item in obj)
    return check


def is_paths(obj):
    return isinstance(obj, dict) and all(
        isinstance(value, str) for value in obj.values())


def is_mu_omega(obj):
    return obj == AUTO or in_range(0)(obj)


def odd_kernel(obj):
    return in_range(1, integer=True)(obj) and obj % 2 == 1


def is_attack(obj):
    return isinstance(obj, dict) and obj.get('kind') in ATTACK_KINDS


def is_gap_source(obj):
    return obj == GENERATOR_SOURCE or is_attack(obj) or (
        isinstance(obj, dict) and obj.get('kind') == ORACLE_KIND)


def is_checkpoints(obj):
    return isinstance(obj, str) or list_of(check_type(str))(obj)


def _param(type_name, func, default=REQUIRED):
    return {'type': type_name, 'func': func, 'default': default}


POSITIVE_INT = 'positive integer'

SECTIONS = {
    'dataset': {
        'kind': _param('one of %s' % ', '.join(DATASET_KINDS),
                       one_of(*DATASET_KINDS)),
        'n_samples': _param(POSITIVE_INT, in_range(1, integer=True), 400),
        'n_features': _param(POSITIVE_INT, in_range(1, integer=True), 2),
        'noise': _param('number >= 0', in_range(0), 0.1),
        'cluster_std': _param('number > 0', in_range(0, low_open=True), 1.0),
        'num_classes': _param('positive integer or null',
                              or_null(in_range(1, integer=True)), None),
        'paths': _param('object of strings', is_paths, {}),
        'test_fraction': _param('number in (0, 1)',
                                in_range(0, 1, low_open=True,
                                         high_open=True), 0.25),
        'flatten': _param('boolean', is_bool, False),
        'augment': _param('boolean or null', or_null(is_bool), None),
        'crop_padding': _param('integer >= 0', in_range(0, integer=True), 2),
        'limit': _param('positive integer or null',
                        or_null(in_range(1, integer=True)), None),
    },
    'model': {
        'arch': _param('one of %s' % ', '.join(ARCHITECTURES),
                       one_of(*ARCHITECTURES)),
        'width': _param('positive integer or null',
                        or_null(in_range(1, integer=True)), None),
        'num_blocks': _param('integer >= 0 or null',
                             or_null(in_range(0, integer=True)), None),
        'stem': _param('boolean', is_bool, True),
        'kernel_size': _param('odd positive integer', odd_kernel, 3),
        'skip_connections': _param('boolean', is_bool, True),
    },
    'training': {
        'regime': _param('one of %s' % ', '.join(REGIMES), one_of(*REGIMES)),
        'epochs': _param(POSITIVE_INT, in_range(1, integer=True)),
        'batch_size': _param(POSITIVE_INT, in_range(1, integer=True), 128),
        'momentum': _param('number in [0, 1)', in_range(0, 1, high_open=True),
                           0.9),
        'lr_max': _param('number > 0', in_range(0, low_open=True), 0.2),
        'weight_decay': _param('number >= 0', in_range(0), 0.0),
        'epsilon': _param('number >= 0', in_range(0), 8.0 / 255),
        'clamp_inputs': _param('boolean', is_bool, False),
        'checkpoint_every': _param('integer >= 0', in_range(0, integer=True),
                                   1),
    },
    'attack': {
        'steps': _param('integer >= 0', in_range(0, integer=True), 10),
        'step_size': _param('number > 0 or null',
                            or_null(in_range(0, low_open=True)), None),
        'init': _param('one of %s or null' % ', '.join(INIT_KINDS),
                       or_null(one_of(*INIT_KINDS)), None),
    },
    'generator': {
        'alpha_init': _param('number >= 0 or null', or_null(in_range(0)),
                             None),
        'alpha_omega': _param('number >= 0 or null', or_null(in_range(0)),
                              None),
        'lambda_reg': _param('number >= 0', in_range(0), 400.0),
        'mu_alpha_max': _param('number >= 0', in_range(0), 5e-8),
        'mu_omega': _param('"auto" or number >= 0', is_mu_omega, AUTO),
        'omega_init': _param('one of %s' % ', '.join(OMEGA_INITS),
                             one_of(*OMEGA_INITS), 'zeros'),
    },
    'evaluation': {
        'attacks': _param('list of attack objects', list_of(is_attack),
                          [{'kind': 'pgd', 'steps': 10},
                           {'kind': 'pgd', 'steps': 20},
                           {'kind': 'gaussian'}]),
        'batch_size': _param(POSITIVE_INT, in_range(1, integer=True), 256),
        'subset_size': _param('positive integer or null',
                              or_null(in_range(1, integer=True)), None),
    },
    'analysis': {
        'source_a': _param('"generator" or an attack object',
                           or_null(is_gap_source), None),
        'source_b': _param('attack or oracle object', is_gap_source,
                           {'kind': 'pgd', 'steps': 10}),
        'checkpoints': _param('directory or list of checkpoint paths',
                              or_null(is_checkpoints), None),
        'gap_subset': _param(POSITIVE_INT, in_range(1, integer=True), 512),
        'target_checkpoint': _param('string or null',
                                    or_null(check_type(str)), None),
        'transfer_attack': _param('attack object', is_attack,
                                  {'kind': 'fgsm'}),
        'epsilons': _param('list of numbers >= 0', list_of(in_range(0)),
                           []),
        'sweep_attack': _param('attack object', is_attack,
                               {'kind': 'pgd', 'steps': 10}),
    },
}

REQUIRED_SECTIONS = ('dataset', 'model', 'training')

TOP_LEVEL = {
    'seed': _param('integer >= 0', in_range(0, integer=True), 0),
    'output_dir': _param('string', check_type(str), 'runs/experiment'),
}

ATTACK_KEYS = {
    'kind': _param('one of %s' % ', '.join(ATTACK_KINDS),
                   one_of(*ATTACK_KINDS)),
    'epsilon': _param('number >= 0 or null', or_null(in_range(0)), None),
    'steps': _param('integer >= 0', in_range(0, integer=True), 0),
    'step_size': _param('number > 0 or null',
                        or_null(in_range(0, low_open=True)), None),
    'init': _param('one of %s or null' % ', '.join(INIT_KINDS),
                   or_null(one_of(*INIT_KINDS)), None),
}

ORACLE_KEYS = {
    'kind': _param('"oracle"', one_of(ORACLE_KIND)),
    'epsilon': _param('number >= 0 or null', or_null(in_range(0)), None),
    'grid_points': _param('integer >= 2', in_range(2, integer=True), 21),
    'mode': _param('one of %s' % ', '.join(ORACLE_MODES),
                   one_of(*ORACLE_MODES), 'grid'),
    'budget': _param(POSITIVE_INT, in_range(1, integer=True),
                     DEFAULT_ORACLE_BUDGET),
}

NESTED_ATTACKS = {
    ('evaluation', 'attacks'), ('analysis', 'source_a'),
    ('analysis', 'source_b'), ('analysis', 'transfer_attack'),
    ('analysis', 'sweep_attack'),
}


def append_doc_link(error_message):
    return error_message + '\n' + LINK_TO_DOCUMENTATION


def check_section(name, section, table, errors):
    """
    Checks one object against its key table and fills in defaults.

    :return: the completed section; problems are appended to ``errors``
    """
    if not isinstance(section, dict):
        errors.append(INCORRECT_SECTION_TYPE_MSG % (name, type(section)))
        return {}
    diff = sorted(set(section) - set(table))
    if diff:
        errors.append(UNSUPPORTED_KEYS_MSG % (name, ', '.join(diff)))
    prepared = {}
    for key, type_info in sorted(table.items()):
        if key not in section:
            if type_info['default'] is REQUIRED:
                errors.append(MISSING_KEY_MSG % (name, key))
            else:
                prepared[key] = copy.deepcopy(type_info['default'])
            continue
        value = section[key]
        if not type_info['func'](value):
            errors.append(INCORRECT_PARAM_TYPE_MSG % (
                name, key, type_info['type'], type(value), value))
        prepared[key] = value
    return prepared


def check_attack(name, attack, errors):
    if not isinstance(attack, dict):
        return attack
    table = ORACLE_KEYS if attack.get('kind') == ORACLE_KIND else ATTACK_KEYS
    return check_section(name, attack, table, errors)


def prepare_configuration(document):
    """
    Validates an experiment document and fills in every default.

    :param document: parsed JSON object
    :return: completed document, safe to hash and to serialize
    :raises: ``ImproperlyConfigured`` listing every problem found
    """
    if not isinstance(document, dict):
        raise ImproperlyConfigured(
            append_doc_link(INCORRECT_DOCUMENT_MSG % type(document)))

    errors = []
    known = set(SECTIONS) | set(TOP_LEVEL)
    diff = sorted(set(document) - known)
    if diff:
        errors.append(UNSUPPORTED_KEYS_MSG % ('<document>', ', '.join(diff)))

    prepared = check_section(
        '<document>', dict((k, v) for k, v in document.items()
                           if k in TOP_LEVEL), TOP_LEVEL, errors)
    for name, table in sorted(SECTIONS.items()):
        if name not in document:
            if name in REQUIRED_SECTIONS:
                errors.append(MISSING_KEY_MSG % ('<document>', name))
            section = {}
        else:
            section = document[name]
        prepared[name] = check_section(name, section, table, errors)

    for section, key in sorted(NESTED_ATTACKS):
        value = prepared.get(section, {}).get(key)
        where = '%s.%s' % (section, key)
        if isinstance(value, list):
            prepared[section][key] = [
                check_attack('%s[%d]' % (where, i), item, errors)
                for i, item in enumerate(value)]
        elif isinstance(value, dict):
            prepared[section][key] = check_attack(where, value, errors)

    if errors:
        errors.append(LINK_TO_DOCUMENTATION)
        raise ImproperlyConfigured('\n'.join(errors))
    return prepared


def load_config(path, seed=None, output_dir=None):
    """
    Reads, overrides and validates an experiment document.

    :param seed: replaces the document's ``seed`` when given
    :param output_dir: replaces the document's ``output_dir`` when given
    """
    try:
        with open(path) as handle:
            document = json.load(handle)
    except (IOError, ValueError) as error:
        raise ImproperlyConfigured(
            append_doc_link(UNREADABLE_DOCUMENT_MSG % (path, error)))
    if isinstance(document, dict):
        if seed is not None:
            document['seed'] = seed
        if output_dir is not None:
            document['output_dir'] = output_dir
    return prepare_configuration(document)


def config_hash(config):
    """md5 of the canonical JSON of everything but ``output_dir``."""
    payload = dict((k, v) for k, v in config.items() if k != 'output_dir')
    canonical = json.dumps(payload, sort_keys=True, separators=(',', ':'))
    return hashlib.md5(canonical.encode('utf-8')).hexdigest()


def build_dataset_descriptor(config):
    return DatasetDescriptor(**config['dataset'])


def build_arch(config, train_set):
    return ArchConfig(input_shape=train_set.input_shape,
                      num_classes=train_set.num_classes, **config['model'])


def build_attack(attack, epsilon, seed=0, clamp_inputs=False):
    """
    An attack object as an ``AttackSpec`` (or the brute-force oracle);
    a missing ``epsilon`` falls back to ``epsilon``.
    """
    attack = dict(attack)
    if attack.get('epsilon') is None:
        attack['epsilon'] = epsilon
    if attack['kind'] == ORACLE_KIND:
        return BruteForceOracle(attack['epsilon'], attack['grid_points'],
                                attack['budget'], attack['mode'])
    return AttackSpec(seed=seed, clamp_inputs=clamp_inputs, **attack)


def build_train_config(config):
    training = config['training']
    attack = config['attack']
    epsilon = training['epsilon']
    evaluation = config['evaluation']
    return TrainConfig(
        regime=training['regime'],
        epochs=training['epochs'],
        batch_size=training['batch_size'],
        momentum=training['momentum'],
        lr_max=training['lr_max'],
        weight_decay=training['weight_decay'],
        epsilon=epsilon,
        attack_steps=attack['steps'],
        attack_step_size=attack['step_size'],
        attack_init=attack['init'],
        generator=GeneratorConfig(**config['generator']),
        eval_attacks=[build_attack(item, epsilon, config['seed'],
                                   training['clamp_inputs'])
                      for item in evaluation['attacks']],
        eval_batch_size=evaluation['batch_size'],
        clamp_inputs=training['clamp_inputs'],
        augment=build_dataset_descriptor(config).augment,
        crop_padding=config['dataset']['crop_padding'],
        seed=config['seed'],
        checkpoint_every=training['checkpoint_every'],
    )
