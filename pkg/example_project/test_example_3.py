# -*- coding: utf-8 -*-
import csv
import os

# add to readme starting from:
from skd_apart import ExperimentSmokeTestCase

CONFIGS = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'configs')

BLOBS_ORACLE = os.path.join(CONFIGS, 'blobs_oracle.json')


def check_oracle_dominates(testcase, output_dir):
    with open(os.path.join(output_dir, 'gap_series.csv')) as handle:
        rows = list(csv.DictReader(handle))
    testcase.assertEqual(len(rows), 3)
    for row in rows:
        # grid tolerance
        testcase.assertGreaterEqual(float(row['gap']), -1e-3)


class OracleSmokeTestCase(ExperimentSmokeTestCase):
    EXPERIMENTS = (
        (BLOBS_ORACLE, 'gap-series', 0,
         {'before': ['train'], 'check': check_oracle_dominates,
          'comment': 'PGD-5 training attack against the brute-force grid'}),
    )
