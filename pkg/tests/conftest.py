import os
import sys

import pytest

# The engine modules are imported by name, the way the command line runs them
sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                                'engine'))

from tkf_autodiff.tensor import set_detect_anomaly  # pylint: disable=wrong-import-position

def pytest_addoption(parser):
    parser.addoption('--gradcheck_variants', action='store', default='all',
                     choices=('basic', 'all'),
                     help='Which registered variants get an end-to-end gradient check')

@pytest.fixture(scope='session')
def gradcheck_variants(pytestconfig):
    return pytestconfig.getoption("gradcheck_variants")

@pytest.fixture(autouse=True)
def anomaly_off():
    """ Every test starts with non-finite detection off """
    set_detect_anomaly(False)
    yield
    set_detect_anomaly(False)
