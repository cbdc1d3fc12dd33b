import os

import numpy as np
import pytest

from example import settings
from mfsocial import options
from mfsocial.models import CostSpec
from mfsocial.models import SystemDynamics
from mfsocial.oracle import is_ms_stabilizer
from mfsocial.pipeline import run_algorithm1

CONFIG_DIR = os.path.join(settings.EXAMPLE_DIR, 'configs')

# Rounded values reported for the benchmark.
TABLE_P = np.array([[61.8, -36.5983], [-36.5983, 84.2412]])
TABLE_K = np.array([[8.4670, -4.9231]])
TABLE_LAMBDA = 0.2010
TABLE_S = np.array([[-3.4935, 3.5718], [3.5718, -9.7025]])
TABLE_KS = np.array([[-0.4815, 0.4923]])
TABLE_S_LEARNED = np.array([[-3.5591, 3.6498], [3.6498, -9.8665]])
TABLE_KS_LEARNED = np.array([[-0.4899, 0.4977]])
TABLE_B = np.array([[0.2009], [0.0011]])
TABLE_A = np.array([[0.3028, 0.7082], [-0.8887, 0.4995]])


def config_path(name):
    return os.path.join(CONFIG_DIR, name)


def random_problem(seed):
    """A small random problem with Hurwitz A, Q > 0, Gamma = gamma I and
    K0 = 0 a mean-square stabilizer.

    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    m = int(rng.integers(1, 3))
    A0 = rng.standard_normal((n, n))
    A = A0 - (np.max(np.linalg.eigvals(A0).real) + 0.5) * np.eye(n)
    B = rng.standard_normal((n, m))
    C = 0.1 * rng.standard_normal((n, n))
    D = 0.1 * rng.standard_normal((n, m))
    F = rng.standard_normal((n, n))
    G = rng.standard_normal((m, m))
    Q = F @ F.T + 0.5 * np.eye(n)
    R = G @ G.T + np.eye(m)
    Gamma = rng.uniform(0.3, 0.95) * np.eye(n)
    K0 = np.zeros((m, n))
    dyn = SystemDynamics(A, B, C, D)
    while not is_ms_stabilizer(K0, dyn):
        C, D = C / 2, D / 2
        dyn = SystemDynamics(A, B, C, D)
    return dyn, CostSpec(Q, R, Gamma), K0


@pytest.fixture
def benchmark():
    return options.get('benchmark')


@pytest.fixture
def bench_dyn(benchmark):
    return benchmark.get_dynamics()


@pytest.fixture
def bench_cost(benchmark):
    return benchmark.get_cost()


@pytest.fixture
def noise_free():
    return options.get('noise-free')


@pytest.fixture(scope='session')
def noise_free_report():
    return run_algorithm1(options.get('noise-free'))


@pytest.fixture(scope='session')
def benchmark_report():
    return run_algorithm1(options.get('benchmark'))


@pytest.fixture(scope='session')
def large_ensemble_report():
    return run_algorithm1(options.get('benchmark-large-ensemble'))
