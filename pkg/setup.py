#!/usr/bin/env python

from setuptools import setup, find_packages

setup(
    name='skd-apart',
    version='0.1.0',
    packages=find_packages(exclude=['skd_apart_tests', 'example_project']),
    description='Adversarial training lab with a learnable layer-wise '
                'perturbation generator and perturbation strength '
                'diagnostics.',
    long_description=open('README.rst').read(),
    license='MIT',
    python_requires='>=3.7',
    install_requires=['numpy>=1.20'],
    tests_require=['mock', 'hypothesis'],
    extras_require={'test': ['mock', 'hypothesis']},
    test_suite='skd_apart_tests',
    entry_points={
        'console_scripts': ['skd-apart=skd_apart.cli:main'],
    },
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: MIT License',
        'Programming Language :: Python :: Implementation :: CPython',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.7',
        'Programming Language :: Python :: 3.8',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
        'Operating System :: OS Independent'])
