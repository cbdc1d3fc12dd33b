import json
import logging
import os

import numpy as np

from mfsocial import export
from mfsocial.exceptions import ConfigurationError
from mfsocial.exceptions import ValidationError
from mfsocial.linalg import as_matrix
from mfsocial.meanfield import IdentifiedModel
from mfsocial.meanfield import mf_from_identified
from mfsocial.models import CostSpec
from mfsocial.models import SystemDynamics
from mfsocial.models import check_dimensions
from mfsocial.models import validate
from mfsocial.oracle import FeedbackSolution
from mfsocial.oracle import pi_feedback
from mfsocial.oracle import pi_feedforward
from mfsocial.oracle import second_are_residual
from mfsocial.pipeline import DecentralizedPolicy
from mfsocial.pipeline import evaluate_social_cost
from mfsocial.pipeline import run_algorithm1
from mfsocial.simulation import InitialStateSampler
from mfsocial.simulation import NoiseSpec
from mfsocial.simulation import SamplingPlan

logger = logging.getLogger(__name__)

SECTIONS = ('dynamics', 'cost', 'sampling', 'noise', 'learning', 'meanfield',
            'population')
SETTINGS = ('seed', 'output_dir', 'output_format', 'quadrature', 'scheme',
            'keep_paths', 'M_eval', 'workers', 'max_windows',
            'feedforward_reference')

# Path seeds per stream, and per run seed.
STREAM_SIZE = 10 ** 6
STREAM_OFFSETS = {'collection': 0, 'meanfield': STREAM_SIZE,
                  'cost': 2 * STREAM_SIZE}
SEED_STRIDE = 3 * STREAM_SIZE


class BaseExperimentConfiguration(object):
    """Every knob of an experiment, with defaults reproducing the two-state
    single-input benchmark.

    Override class attributes in a subclass, or load a JSON document whose
    top-level keys are the section names. Sections given in a document are
    merged into the defaults.

    """
    dynamics = {
        'A': [[0.3, 0.7], [-0.9, 0.5]],
        'B': [[0.2], [0.0]],
        'C': [[0.05, 0.03], [0.05, 0.02]],
        'D': [[0.05], [0.06]],
    }
    cost = {
        'Q': [[3.0, 0.0], [0.0, 2.0]],
        'R': [[1.25]],
        'Gamma': [[0.9, 0.0], [0.0, 0.9]],
    }
    sampling = {'t1': 0.0, 'Ts': 0.001, 'T': 0.9, 'l': 9101, 'dt': 0.001,
                'horizon': 10.0}
    noise = {'mode': 'sinusoids', 'J': 100, 'freq_lo': -100.0,
             'freq_hi': 100.0, 'amplitude': 1.0, 'seed': 0}
    learning = {'K0': [[6.0, -3.0]], 'xi': 1e-4, 'max_iter': 50, 'M': 100}
    meanfield = {'Ns': 1000, 'xbar0': [2.0, 2.0], 'x0_half_width': 2.0}
    population = {'N': 40}

    seed = 0
    output_dir = 'out'
    output_format = 'csv'
    quadrature = 'trapezoid'
    scheme = 'auto'
    keep_paths = 10
    M_eval = 50
    workers = 1
    max_windows = None
    # Feedback pair {'K', 'Lambda'} at which the oracle command also
    # evaluates the feedforward solution.
    feedforward_reference = None

    def __init__(self, key='custom', **overrides):
        self.key = key
        for name in SECTIONS:
            merged = dict(getattr(self, name))
            merged.update(overrides.pop(name, None) or {})
            setattr(self, name, merged)
        for name in SETTINGS:
            if name in overrides:
                setattr(self, name, overrides.pop(name))
        if overrides:
            raise ConfigurationError("unknown configuration keys: %s"
                                     % ", ".join(sorted(overrides)))

    # Documents

    @classmethod
    def from_document(cls, document, key='custom'):
        if not isinstance(document, dict):
            raise ConfigurationError("a configuration document must be an "
                                     "object")
        for name in SECTIONS:
            section = document.get(name, {})
            if not isinstance(section, dict):
                raise ConfigurationError("section %r must be an object" % name)
            unknown = set(section) - set(getattr(cls, name))
            if unknown:
                raise ConfigurationError("unknown keys in %r: %s"
                                         % (name, ", ".join(sorted(unknown))))
        return cls(key=key, **document)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as f:
                document = json.load(f)
        except (OSError, ValueError) as e:
            raise ConfigurationError("cannot read configuration %s: %s"
                                     % (path, e))
        key = os.path.splitext(os.path.basename(path))[0]
        return cls.from_document(document, key=key)

    def to_document(self):
        document = {name: dict(getattr(self, name)) for name in SECTIONS}
        document.update({name: getattr(self, name) for name in SETTINGS})
        return document

    def override(self, **settings):
        """Copy of this configuration with settings replaced and sections
        updated; None values are ignored.

        """
        document = self.to_document()
        for name, value in settings.items():
            if value is None:
                continue
            if name in SECTIONS:
                document[name] = dict(document[name], **value)
            else:
                document[name] = value
        return type(self)(key=self.key, **document)

    # Domain objects

    def get_dynamics(self):
        return SystemDynamics(**{name: self.dynamics[name]
                                 for name in ('A', 'B', 'C', 'D')})

    def get_cost(self):
        return CostSpec(**{name: self.cost[name]
                           for name in ('Q', 'R', 'Gamma')})

    def get_plan(self):
        return SamplingPlan(scheme=self.scheme, **self.sampling)

    def get_noise(self, m):
        return NoiseSpec(channels=m, **self.noise)

    def get_k0(self):
        K0 = as_matrix(self.learning['K0'], name='K0')
        return K0

    def get_xbar0(self):
        return np.asarray(self.meanfield['xbar0'], dtype=float)

    def get_feedforward_reference(self, cost):
        reference = self.feedforward_reference
        if reference is None:
            return None
        if not isinstance(reference, dict) or set(reference) != {'K',
                                                                 'Lambda'}:
            raise ConfigurationError("feedforward_reference needs exactly "
                                     "the keys K and Lambda")
        return FeedbackSolution.from_gains(reference['K'], reference['Lambda'],
                                           cost.R)

    def get_initial_sampler(self):
        return InitialStateSampler(
            mean=tuple(self.meanfield['xbar0']),
            half_width=self.meanfield.get('x0_half_width', 0.0))

    def get_seeds(self):
        """Bases of the independent random streams of a run.

        Path i of a stream uses ``base + i``. Each run seed owns a block of
        `SEED_STRIDE` path seeds, so runs with adjacent seeds share no path.

        """
        sizes = {'collection': self.learning['M'],
                 'meanfield': self.meanfield['Ns'],
                 'cost': self.M_eval * self.population['N']}
        for stream, size in sizes.items():
            if size > STREAM_SIZE:
                raise ConfigurationError(
                    "the %s stream needs %d path seeds, more than %d"
                    % (stream, size, STREAM_SIZE))
        base = self.seed * SEED_STRIDE
        return {stream: base + offset
                for stream, offset in STREAM_OFFSETS.items()}

    def get_output_dir(self):
        return self.output_dir

    # Commands

    def validate(self):
        """Check the configuration and the standing assumptions."""
        dyn = self.get_dynamics()
        cost = self.get_cost()
        check_dimensions(dyn, cost)
        self.get_plan()
        self.get_noise(dyn.m)
        report = validate(dyn, cost, self.get_k0())
        document = report.to_document()
        export.write_json(document, os.path.join(self.get_output_dir(),
                                                 'validation.json'))
        if not report.ok:
            raise ValidationError("; ".join(report.notes))
        return document

    def oracle(self):
        """Model-based solutions only; no data is simulated."""
        dyn = self.get_dynamics()
        cost = self.get_cost()
        learning = self.learning
        fb, fb_trace = pi_feedback(dyn, cost, self.get_k0(), learning['xi'],
                                   learning['max_iter'])
        ff, ff_trace = pi_feedforward(dyn, cost, fb, learning['xi'],
                                      learning['max_iter'])
        residual = second_are_residual(ff.Pi, fb.P, dyn, cost)
        document = {
            'config': self.to_document(),
            'feedback': fb.to_document(),
            'feedforward': ff.to_document(),
            'iterations': {fb_trace.loop: len(fb_trace),
                           ff_trace.loop: len(ff_trace)},
            'second_are_residual': float(np.linalg.norm(residual, 2)),
        }
        traces = [fb_trace, ff_trace]
        reference = self.get_feedforward_reference(cost)
        if reference is not None:
            ref_ff, ref_trace = pi_feedforward(dyn, cost, reference,
                                               learning['xi'],
                                               learning['max_iter'])
            ref_trace.loop = 'oracle-feedforward-reference'
            traces.append(ref_trace)
            document['reference'] = {'feedback': reference.to_document(),
                                     'feedforward': ref_ff.to_document()}
            document['iterations'][ref_trace.loop] = len(ref_trace)
        out_dir = self.get_output_dir()
        export.write_json(document, os.path.join(out_dir, 'oracle.json'))
        export.write_convergence(traces, out_dir, self.output_format)
        return document

    def learn(self):
        """Run the model-free design and write every output."""
        report = run_algorithm1(self)
        export.write_run(report, self.get_output_dir(), self.output_format)
        return report.to_document()

    def meanfield_paths(self):
        """The design up to the mean-field stage; no social cost."""
        report = run_algorithm1(self, evaluate_cost=False)
        out_dir = self.get_output_dir()
        export.write_meanfield(report.meanfield.values(), out_dir,
                               self.output_format)
        document = report.to_document()
        export.write_json(document, os.path.join(out_dir, 'report.json'))
        return document

    def cost_of_oracle_policy(self):
        """Per-agent social cost of the model-based decentralized policy."""
        dyn = self.get_dynamics()
        cost = self.get_cost()
        plan = self.get_plan()
        fb, _ = pi_feedback(dyn, cost, self.get_k0(), self.learning['xi'],
                            self.learning['max_iter'])
        ff, _ = pi_feedforward(dyn, cost, fb, self.learning['xi'],
                               self.learning['max_iter'])
        exact = IdentifiedModel(Ahat=np.asarray(dyn.A), Bhat=np.asarray(dyn.B))
        path = mf_from_identified(exact, fb.K, ff.Ks, self.get_xbar0(),
                                  plan.times, method='exact')
        value = evaluate_social_cost(dyn, cost,
                                     DecentralizedPolicy(fb.K, ff.Ks, path),
                                     self.population['N'], plan.horizon,
                                     self.M_eval, self.get_seeds()['cost'],
                                     x0_sampler=self.get_initial_sampler(),
                                     dt=plan.dt, scheme=plan.scheme)
        document = {'per_agent_cost': value, 'N': self.population['N'],
                    'M_eval': self.M_eval, 'horizon': plan.horizon}
        export.write_json(document, os.path.join(self.get_output_dir(),
                                                 'cost.json'))
        return document


class BenchmarkConfiguration(BaseExperimentConfiguration):
    """The default benchmark. The oracle command also evaluates the
    feedforward solution at the published learned feedback pair, which is
    what the published feedforward values are computed against.

    """
    feedforward_reference = {'K': [[8.4670, -4.9231]], 'Lambda': [[0.2010]]}


class ConfigurationAlreadyRegistered(ConfigurationError):
    pass


class ConfigurationNotRegistered(ConfigurationError):
    pass


class ExperimentOptions(object):
    __shared_state = {'configurations': {}}

    def __init__(self):
        self.__dict__ = self.__shared_state

    def register(self, key, configuration=BaseExperimentConfiguration):
        if key in self.configurations:
            raise ConfigurationAlreadyRegistered(key)
        self.configurations[key] = configuration(key=key)

    def get(self, key):
        try:
            return self.configurations[key]
        except KeyError:
            raise ConfigurationNotRegistered(key)


options = ExperimentOptions()

register = options.register
get = options.get

register('benchmark', BenchmarkConfiguration)
