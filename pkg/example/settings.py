import os

from mfsocial import options

EXAMPLE_DIR = os.path.abspath(os.path.dirname(__file__))

ZERO_DIFFUSION = {'C': [[0.0, 0.0], [0.0, 0.0]], 'D': [[0.0], [0.0]]}


class NoiseFreeConfiguration(options.BaseExperimentConfiguration):
    """The benchmark with C = D = 0, one path and smooth low-frequency
    excitation. Data integrals are then exact to solver precision, so the
    learned and model-based gains coincide.

    """
    dynamics = dict(options.BaseExperimentConfiguration.dynamics,
                    **ZERO_DIFFUSION)
    sampling = {'t1': 0.0, 'Ts': 0.01, 'T': 0.5, 'l': 551, 'dt': 0.001,
                'horizon': 6.0}
    noise = {'mode': 'sinusoids', 'J': 10, 'freq_lo': -5.0, 'freq_hi': 5.0,
             'amplitude': 1.0, 'seed': 0}
    learning = {'K0': [[6.0, -3.0]], 'xi': 1e-9, 'max_iter': 50, 'M': 1}
    meanfield = {'Ns': 1, 'xbar0': [2.0, 2.0], 'x0_half_width': 0.0}
    population = {'N': 1}

    quadrature = 'simpson'
    keep_paths = 1
    M_eval = 1


class DeterministicLQRConfiguration(NoiseFreeConfiguration):
    """No diffusion and no coupling: the design reduces to classical LQR."""
    cost = dict(options.BaseExperimentConfiguration.cost,
                Gamma=[[0.0, 0.0], [0.0, 0.0]])


options.register('noise-free', NoiseFreeConfiguration)
options.register('deterministic-lqr', DeterministicLQRConfiguration)


class LargeEnsembleBenchmarkConfiguration(options.BenchmarkConfiguration):
    """The benchmark with enough collection paths that the sampling error
    of the data integrals no longer dominates the learned gains.

    """
    learning = dict(options.BenchmarkConfiguration.learning, M=20000)


options.register('benchmark-large-ensemble',
                 LargeEnsembleBenchmarkConfiguration)
