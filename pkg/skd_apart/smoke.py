# -*- coding: utf-8 -*-
"""
Smoke tests for experiment documents: subclass
:class:`ExperimentSmokeTestCase`, list ``EXPERIMENTS`` and one test method
per entry runs the command line end to end in a scratch directory.
"""
import os
import shutil
import tempfile
import traceback
from unittest import TestCase
from uuid import uuid4

from .cli import SUBCOMMANDS, run
from .exceptions import ImproperlyConfigured

# start configuration error messages
IMPROPERLY_BUILT_CONFIGURATION_MSG = \
    'Every experiment config should contain three or four elements ' \
    '(config_path, subcommand, status, options=None).'

EMPTY_EXPERIMENTS_MSG = 'skd-apart ExperimentSmokeTestCase has empty ' \
                        'EXPERIMENTS.'

INCORRECT_EXPERIMENTS_MSG = \
    'skd-apart ExperimentSmokeTestCase should define EXPERIMENTS list or ' \
    'tuple.'

UNSUPPORTED_CONFIGURATION_KEY_MSG = \
    'skd-apart smoke configuration does not support those keys: %s.'

INCORRECT_REQUIRED_PARAM_TYPE_MSG = \
    'skd-apart: Configuration parameter "%s" with index=%s should be ' \
    '%s but is %s with next value: %s.'

INCORRECT_NOT_REQUIRED_PARAM_TYPE_MSG = \
    'skd-apart: Configuration parameter "%s" should be ' \
    '%s but is %s with next value: %s.'

UNKNOWN_SUBCOMMAND_MSG = \
    'Your skd-apart smoke configuration defines unknown subcommand: "%s".'

LINK_TO_DOCUMENTATION = \
    'For more information please refer to the Smoke tests section of ' \
    'README.rst.'
# end configuration error messages


REQUIRED_PARAMS = (
    {'display_name': 'config_path', 'expected_type': str},
    {'display_name': 'subcommand', 'expected_type': str},
    {'display_name': 'status', 'expected_type': int},
)


def check_type(types):
    def check(obj):
        return isinstance(obj, types)
    return check


def list_or_callable(value):
    return isinstance(value, (list, tuple)) or callable(value)


NOT_REQUIRED_PARAM_TYPE_CHECK = {
    'comment': {'type': 'string', 'func': check_type(str)},
    'initialize': {'type': 'callable', 'func': callable},
    'seed': {'type': 'int', 'func': check_type(int)},
    'check': {'type': 'callable', 'func': callable},
    'before': {'type': 'list or callable', 'func': list_or_callable},
}


def append_doc_link(error_message):
    return error_message + '\n' + LINK_TO_DOCUMENTATION


def prepare_configuration(experiments):
    """
    Prepares the smoke configuration. Raises exception if there is any
    problem with it.

    :param experiments: tuple or list of ``(config_path, subcommand,
        status[, options])``
    :return: list of four-element tuples
    :raises: ``ImproperlyConfigured`` if there is any problem with
        supplied ``experiments``
    """
    if not isinstance(experiments, (tuple, list)):
        raise ImproperlyConfigured(
            append_doc_link(INCORRECT_EXPERIMENTS_MSG))

    confs = []
    for experiment in experiments:
        if len(experiment) == len(REQUIRED_PARAMS):
            experiment = tuple(experiment) + ({},)
        elif len(experiment) == len(REQUIRED_PARAMS) + 1:
            diff = set(experiment[-1]) - set(NOT_REQUIRED_PARAM_TYPE_CHECK)
            if diff:
                raise ImproperlyConfigured(append_doc_link(
                    UNSUPPORTED_CONFIGURATION_KEY_MSG % ', '.join(
                        sorted(diff))))
        else:
            raise ImproperlyConfigured(
                append_doc_link(IMPROPERLY_BUILT_CONFIGURATION_MSG))

        type_errors = []
        for idx, required_param in enumerate(experiment[:3]):
            required_type = REQUIRED_PARAMS[idx]['expected_type']
            if not isinstance(required_param, required_type):
                type_errors.append(INCORRECT_REQUIRED_PARAM_TYPE_MSG % (
                    REQUIRED_PARAMS[idx]['display_name'], idx,
                    required_type, type(required_param), required_param))

        subcommand = experiment[1]
        if isinstance(subcommand, str) and subcommand not in SUBCOMMANDS:
            type_errors.append(UNKNOWN_SUBCOMMAND_MSG % subcommand)

        for key, value in experiment[-1].items():
            type_info = NOT_REQUIRED_PARAM_TYPE_CHECK[key]
            if not type_info['func'](value):
                type_errors.append(INCORRECT_NOT_REQUIRED_PARAM_TYPE_MSG % (
                    key, type_info['type'], type(value), value))

        if type_errors:
            type_errors.append(LINK_TO_DOCUMENTATION)
            raise ImproperlyConfigured('\n'.join(type_errors))
        confs.append(experiment)

    if not confs:
        raise ImproperlyConfigured(append_doc_link(EMPTY_EXPERIMENTS_MSG))
    return confs


def generate_fail_test_method(exception_stacktrace):
    """
    Generates test method which fails and informs user about occurred
    exception.
    """
    def fail_method(self):
        self.fail(exception_stacktrace)
    return fail_method


def generate_test_method(config_path, subcommand, status, initialize=None,
                         seed=None, check=None, before=None):
    """
    Generates test method which runs ``before`` subcommands and then
    ``subcommand`` on ``config_path`` inside one scratch output directory,
    and compares the exit status with ``status``.

    :param initialize: called with the test case and the scratch directory
        first
    :param before: list of subcommands (or a callable returning it) that
        must succeed first, e.g. ``['train']`` before ``evaluate``
    :param check: called with the test case and the scratch directory
        after the run
    """
    def new_test_method(self):
        output_dir = tempfile.mkdtemp(prefix='skd-apart-')
        self.addCleanup(shutil.rmtree, output_dir, True)
        if initialize:
            initialize(self, output_dir)
        steps = before(self) if callable(before) else (before or [])
        for step in steps:
            self.assertEqual(run(step, config_path, seed, output_dir), 0,
                             'prerequisite "%s" failed' % step)
        self.assertEqual(run(subcommand, config_path, seed, output_dir),
                         status)
        if check:
            check(self, output_dir)
    return new_test_method


def prepare_test_name(config_path, subcommand, status):
    prepared_path = os.path.splitext(os.path.basename(config_path))[0]
    name = 'test_smoke_%(path)s_%(subcommand)s_%(status)s_%(uuid)s' % {
        'path': prepared_path.replace('-', '_'),
        'subcommand': subcommand.replace('-', '_'),
        'status': status,
        'uuid': uuid4().hex,
    }
    return name


def prepare_test_method_doc(config_path, subcommand, status, comment=None):
    result = 'skd-apart %s --config %s -> exit %s' % (
        subcommand, config_path, status)
    if comment:
        result = '%s %s' % (result, comment)
    return result


class GenerateTestMethodsMeta(type):
    """
    Metaclass which creates test methods from ``EXPERIMENTS``. Only
    subclasses of the first class using it get methods.
    """

    def __new__(mcs, name, bases, attrs):
        cls = super(GenerateTestMethodsMeta, mcs).__new__(
            mcs, name, bases, attrs)

        parents = [b for b in bases if isinstance(b, GenerateTestMethodsMeta)]
        if not parents:
            return cls

        # noinspection PyBroadException
        try:
            config = prepare_configuration(cls.EXPERIMENTS)
        except Exception:
            fail_method = generate_fail_test_method(traceback.format_exc())
            fail_method.__name__ = str(cls.FAIL_METHOD_NAME)
            setattr(cls, cls.FAIL_METHOD_NAME, fail_method)
        else:
            for config_path, subcommand, status, options in config:
                test_method = generate_test_method(
                    config_path, subcommand, status,
                    options.get('initialize'), options.get('seed'),
                    options.get('check'), options.get('before'))
                test_method_name = prepare_test_name(config_path, subcommand,
                                                     status)
                test_method.__name__ = str(test_method_name)
                test_method.__doc__ = prepare_test_method_doc(
                    config_path, subcommand, status, options.get('comment'))
                setattr(cls, test_method_name, test_method)
        return cls


class ExperimentSmokeTestCase(TestCase, metaclass=GenerateTestMethodsMeta):
    """
    TestCase to derive from. ``EXPERIMENTS`` is a tuple or list of::

        (config_path, subcommand, status,
            {'comment': None, 'initialize': None, 'seed': None,
             'check': None, 'before': None})
    """

    EXPERIMENTS = None
    FAIL_METHOD_NAME = 'test_fail_cause_bad_configuration'
