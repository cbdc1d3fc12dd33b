"""Model-free design loop from data collection to the decentralized policy.

``run_algorithm1`` runs the stages in order:

    initialization -> data-collection -> feedback -> feedforward ->
    identification -> meanfield-monte-carlo -> oracle -> social-cost

Only the stages that run the agent (initialization, data-collection,
meanfield-monte-carlo, social-cost) and the model-based comparison (oracle)
read the system matrices; they do so through ``Plant``, which records the
stage of every access.

"""
import logging
from contextlib import contextmanager
from dataclasses import dataclass
from dataclasses import field

import numpy as np
from scipy import integrate

from mfsocial.exceptions import Error
from mfsocial.exceptions import ValidationError
from mfsocial.feedback import RankConditionViolated
from mfsocial.feedback import build_feedback_dataset
from mfsocial.feedback import check_rank_feedback
from mfsocial.feedback import feedback_rank_required
from mfsocial.feedback import irl_feedback_iterate
from mfsocial.feedforward import build_feedforward_dataset
from mfsocial.feedforward import check_rank_feedforward
from mfsocial.feedforward import feedforward_rank_required
from mfsocial.feedforward import irl_feedforward_iterate
from mfsocial.meanfield import IdentificationUnavailable
from mfsocial.meanfield import IdentifiedModel
from mfsocial.meanfield import identify_A
from mfsocial.meanfield import identify_B
from mfsocial.meanfield import mf_from_identified
from mfsocial.meanfield import mf_monte_carlo
from mfsocial.models import gamma_weight
from mfsocial.models import validate
from mfsocial.oracle import FeedbackSolution
from mfsocial.oracle import FeedforwardSolution
from mfsocial.oracle import NoConvergence
from mfsocial.oracle import NotAStabilizer
from mfsocial.oracle import gain_from_value
from mfsocial.oracle import pi_feedback
from mfsocial.oracle import pi_feedforward
from mfsocial.oracle import sare_residual
from mfsocial.simulation import AffinePolicy
from mfsocial.simulation import SamplingPlan
from mfsocial.simulation import initial_state
from mfsocial.simulation import integrate_batch
from mfsocial.simulation import simulate_ensemble

logger = logging.getLogger(__name__)

ROUTE_TOLERANCE = 0.1
LEARNING_STAGES = ('feedback', 'feedforward', 'identification')


class StageFailed(Error):
    """A pipeline stage raised; carries the stage name, the report as far
    as it got and the original exception.

    """
    def __init__(self, stage, report, cause):
        super(StageFailed, self).__init__("stage %r failed: %s"
                                          % (stage, cause))
        self.stage = stage
        self.report = report
        self.cause = cause


class Plant(object):
    """Access-audited handle on the system matrices."""

    def __init__(self, dynamics):
        self._dynamics = dynamics
        self.stage = None
        self.accesses = []

    @property
    def dynamics(self):
        self.accesses.append(self.stage)
        return self._dynamics

    def accessed_in(self, stages):
        return [stage for stage in self.accesses if stage in stages]


@dataclass(frozen=True, eq=False)
class DecentralizedPolicy(object):
    """``u_i = -K x_i - Ks xbar(t)``."""
    K: np.ndarray
    Ks: np.ndarray
    meanfield: object

    def control(self, x, t):
        xbar = self.meanfield.at(t)[0]
        return -self.K @ np.asarray(x, dtype=float) - self.Ks @ xbar

    def to_affine(self, exploration=None):
        return AffinePolicy(K=np.asarray(self.K, dtype=float),
                            feedforward=self.meanfield.feedforward(self.Ks),
                            exploration=exploration)


@dataclass(eq=False)
class RunReport(object):
    config: dict
    plan: dict = None
    validation: dict = None
    learned_feedback: object = None
    learned_feedforward: object = None
    oracle_feedback: object = None
    oracle_feedforward: object = None
    identified: object = None
    metrics: dict = field(default_factory=dict)
    meanfield: dict = field(default_factory=dict)
    costs: dict = field(default_factory=dict)
    convergence: dict = field(default_factory=dict)
    traces: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    audit: list = field(default_factory=list)
    stages: list = field(default_factory=list)
    trajectories: list = field(default_factory=list)
    feedback_dataset: object = None
    feedforward_dataset: object = None

    @property
    def converged(self):
        return all(entry['converged'] for entry in self.convergence.values())

    def iterations(self, loop):
        for trace in self.traces:
            if trace.loop == loop:
                return len(trace)
        return None

    def to_document(self):
        def doc(value):
            return None if value is None else value.to_document()

        return {
            'config': self.config,
            'plan': self.plan,
            'validation': self.validation,
            'learned': {'feedback': doc(self.learned_feedback),
                        'feedforward': doc(self.learned_feedforward)},
            'oracle': {'feedback': doc(self.oracle_feedback),
                       'feedforward': doc(self.oracle_feedforward)},
            'identified': doc(self.identified),
            'metrics': self.metrics,
            'costs': self.costs,
            'iterations': {trace.loop: len(trace) for trace in self.traces},
            'convergence': dict(self.convergence),
            'meanfield': {method: path.xbar[-1].tolist()
                          for method, path in self.meanfield.items()},
            'notes': list(self.notes),
            'audit': list(self.audit),
            'stages': list(self.stages),
        }


def comparison_metrics(dyn, cost, learned_fb, learned_ff, oracle_fb=None,
                       oracle_ff=None):
    """Errors of the learned solution; the first three need no oracle."""
    P, K, Lambda = learned_fb.P, learned_fb.K, learned_fb.Lambda
    metrics = {
        'sare_residual': float(np.linalg.norm(sare_residual(P, dyn, cost), 2)),
        'gain_error': float(np.linalg.norm(K - gain_from_value(P, dyn, cost),
                                           2)),
        'lambda_error': float(np.linalg.norm(Lambda - dyn.D.T @ P @ dyn.D)),
    }
    if oracle_fb is not None:
        metrics['P_error'] = float(np.linalg.norm(P - oracle_fb.P))
        metrics['K_error'] = float(np.linalg.norm(K - oracle_fb.K))
    if oracle_ff is not None and learned_ff is not None:
        metrics['S_error'] = float(np.linalg.norm(learned_ff.S - oracle_ff.S))
        metrics['Ks_error'] = float(np.linalg.norm(learned_ff.Ks
                                                   - oracle_ff.Ks))
    return metrics


class _SocialCostObserver(object):
    """Sum over agents of ``|x_i - Gamma x_(N)|_Q^2 + |u_i|_R^2`` per grid
    point.

    """
    def __init__(self, length, cost):
        self.cost = cost
        self.integrand = np.zeros(length)

    def update(self, start, X, U):
        Q, R, G = self.cost.Q, self.cost.R, self.cost.Gamma
        average = X.mean(axis=1)
        E = X - (average @ G.T)[:, None, :]
        state = np.einsum('cbi,ij,cbj->c', E, Q, E)
        control = np.einsum('cbi,ij,cbj->c', U, R, U)
        self.integrand[start:start + X.shape[0]] = state + control


def evaluate_social_cost(dyn, cost, policy, N, horizon, M_eval, seed,
                         x0_sampler=None, dt=0.001, scheme='auto'):
    """Per-agent social cost ``J_soc / N`` on ``[0, horizon]``, averaged over
    `M_eval` replications of `N` agents.

    `policy` is a ``DecentralizedPolicy`` or an ``AffinePolicy``. Agent i of
    replication r uses seed ``seed + r N + i``, so two policies evaluated
    with the same seed share their noise.

    """
    if N < 1 or M_eval < 1:
        raise ValidationError("N and M_eval must be positive")
    if x0_sampler is None:
        if not isinstance(policy, DecentralizedPolicy):
            raise ValidationError("an initial-state sampler is required")
        x0_sampler = policy.meanfield.xbar0
    affine = policy.to_affine() if isinstance(policy, DecentralizedPolicy) \
        else policy
    plan = SamplingPlan(t1=0.0, Ts=dt, T=dt, l=1, dt=dt, horizon=horizon,
                        scheme=scheme)
    length = plan.steps + 1

    totals = []
    for r in range(M_eval):
        seeds = [seed + r * N + i for i in range(N)]
        X0 = np.array([initial_state(x0_sampler, s) for s in seeds])
        rngs = [np.random.default_rng(s) for s in seeds]
        observer = _SocialCostObserver(length, cost)
        integrate_batch(dyn, affine, X0.reshape(N, dyn.n), rngs, plan,
                        [observer])
        totals.append(integrate.trapezoid(observer.integrand, dx=dt))
    value = float(np.mean(totals)) / N
    logger.debug("social cost over %d replications: %.6g", M_eval, value)
    return value


class _Run(object):
    def __init__(self, cfg):
        self.cfg = cfg
        self.plant = Plant(cfg.get_dynamics())
        self.report = RunReport(config=cfg.to_document())

    @contextmanager
    def stage(self, name):
        logger.info("stage %s", name)
        self.plant.stage = name
        try:
            yield
        except Error as e:
            self.report.audit = list(self.plant.accesses)
            raise StageFailed(name, self.report, e)
        finally:
            self.plant.stage = None
        self.report.stages.append(name)


def _iterate(report, solve, *args):
    """Run one of the policy iterations. A loop that exhausts its budget is
    recorded and its last iterate returned as a snapshot instead of a
    solution.

    """
    try:
        solution, trace = solve(*args)
        converged = True
    except NoConvergence as e:
        trace = e.trace
        if not len(trace):
            raise
        solution, converged = None, False
        logger.warning("%s; continuing with iterate %d", e, len(trace))
        report.notes.append("%s; continued with the last iterate" % e)
    final = trace.final
    report.traces.append(trace)
    report.convergence[trace.loop] = {
        'converged': converged,
        'iterations': len(trace),
        'final_update': final.update_norm,
        'final_residual': final.residual_norm,
    }
    return solution, final.snapshot


def _feedback_of(snapshot, cost):
    return FeedbackSolution.from_gains(snapshot['K'], snapshot['Lambda'],
                                       cost.R, P=snapshot['P'])


def _feedforward_of(snapshot, P):
    S = snapshot['S']
    return FeedforwardSolution(S=S, Ks=snapshot['Ks'], Pi=P + S)


def _collect(run, dyn, K0):
    cfg = run.cfg
    plan = cfg.get_plan()
    n, m = dyn.n, dyn.m
    required = max(feedback_rank_required(n, m),
                   feedforward_rank_required(n, m))
    plan.check_rank_bound(required)
    policy = AffinePolicy(K=K0, exploration=cfg.get_noise(m))
    ens = simulate_ensemble(dyn, policy, cfg.get_initial_sampler(), plan,
                            cfg.learning['M'], base_seed=cfg.get_seeds()[
                                'collection'],
                            keep_paths=cfg.keep_paths, workers=cfg.workers)

    cap = min(cfg.max_windows or plan.max_windows, plan.max_windows)
    while True:
        fb_ds = build_feedback_dataset(ens, plan, cfg.quadrature)
        ff_ds = build_feedforward_dataset(ens, plan, cfg.quadrature)
        if check_rank_feedback(fb_ds) and check_rank_feedforward(ff_ds):
            return ens, plan, fb_ds, ff_ds
        if plan.l >= cap:
            raise RankConditionViolated(
                "the data matrices do not reach the required rank with "
                "l = %d windows (cap %d)" % (plan.l, cap))
        plan = plan.with_windows(min(2 * plan.l, cap))
        logger.info("rank condition not met; extending to l = %d windows",
                    plan.l)


def run_algorithm1(cfg, evaluate_cost=True):
    """Run the model-free design for the configuration `cfg` and return a
    ``RunReport``. Any stage error is re-raised as ``StageFailed``.

    """
    run = _Run(cfg)
    report = run.report
    cost = cfg.get_cost()
    learning = cfg.learning
    xbar0 = cfg.get_xbar0()
    seeds = cfg.get_seeds()

    with run.stage('initialization'):
        dyn = run.plant.dynamics
        K0 = cfg.get_k0()
        checks = validate(dyn, cost, K0)
        report.validation = checks.to_document()
        if not (checks.q_psd and checks.r_pd):
            raise ValidationError("; ".join(checks.notes))
        if not checks.ms_stabilizer_ok:
            raise NotAStabilizer("K0 is not a mean-square stabilizer")

    with run.stage('data-collection'):
        ens, plan, fb_ds, ff_ds = _collect(run, run.plant.dynamics, K0)
        report.plan = plan.to_document()
        report.trajectories = ens.paths
        report.feedback_dataset = fb_ds
        report.feedforward_dataset = ff_ds

    with run.stage('feedback'):
        fb, snapshot = _iterate(report, irl_feedback_iterate, fb_ds, K0,
                                cost, learning['xi'], learning['max_iter'])
        if fb is None:
            fb = _feedback_of(snapshot, cost)
        report.learned_feedback = fb

    with run.stage('feedforward'):
        Upsilon = fb.upsilon(cost.R)
        ff, snapshot = _iterate(report, irl_feedforward_iterate, ff_ds, fb.K,
                                Upsilon, gamma_weight(cost).QGamma,
                                learning['xi'], learning['max_iter'], fb.P)
        if ff is None:
            ff = _feedforward_of(snapshot, fb.P)
        report.learned_feedforward = ff

    with run.stage('identification'):
        try:
            Bhat = identify_B(ff.S, ff.Ks, Upsilon)
            report.identified = identify_A(ff_ds, Bhat)
        except IdentificationUnavailable as e:
            logger.warning("%s", e)
            report.notes.append(str(e))
        else:
            report.meanfield['identified'] = mf_from_identified(
                report.identified, fb.K, ff.Ks, xbar0, plan.times)

    with run.stage('meanfield-monte-carlo'):
        report.meanfield['monte-carlo'] = mf_monte_carlo(
            run.plant.dynamics, fb.K, ff.Ks, xbar0, cfg.meanfield['Ns'],
            plan, seeds['meanfield'], workers=cfg.workers)
        if 'identified' in report.meanfield:
            gap = report.meanfield['identified'].sup_distance(
                report.meanfield['monte-carlo'])
            report.metrics['route_discrepancy'] = gap
            if gap > ROUTE_TOLERANCE:
                logger.warning("mean-field routes differ by %.3g", gap)
                report.notes.append("mean-field routes differ by %.3g (sup "
                                    "norm)" % gap)

    with run.stage('oracle'):
        dyn = run.plant.dynamics
        oracle_fb, snapshot = _iterate(report, pi_feedback, dyn, cost, K0,
                                       learning['xi'], learning['max_iter'])
        if oracle_fb is None:
            oracle_fb = _feedback_of(snapshot, cost)
        oracle_ff, snapshot = _iterate(report, pi_feedforward, dyn, cost,
                                       oracle_fb, learning['xi'],
                                       learning['max_iter'])
        if oracle_ff is None:
            oracle_ff = _feedforward_of(snapshot, oracle_fb.P)
        report.oracle_feedback = oracle_fb
        report.oracle_feedforward = oracle_ff
        report.metrics.update(comparison_metrics(dyn, cost, fb, ff,
                                                 oracle_fb, oracle_ff))
        exact = IdentifiedModel(Ahat=np.asarray(dyn.A), Bhat=np.asarray(dyn.B))
        report.meanfield['exact'] = mf_from_identified(
            exact, oracle_fb.K, oracle_ff.Ks, xbar0, plan.times,
            method='exact')

    if evaluate_cost:
        with run.stage('social-cost'):
            dyn = run.plant.dynamics
            learned_mf = report.meanfield.get('identified',
                                              report.meanfield['monte-carlo'])
            policies = {
                'learned': DecentralizedPolicy(fb.K, ff.Ks, learned_mf),
                'oracle': DecentralizedPolicy(oracle_fb.K, oracle_ff.Ks,
                                              report.meanfield['exact']),
            }
            N = cfg.population['N']
            sampler = cfg.get_initial_sampler()
            for name, policy in policies.items():
                report.costs[name] = evaluate_social_cost(
                    dyn, cost, policy, N, plan.horizon, cfg.M_eval,
                    seeds['cost'], x0_sampler=sampler, dt=plan.dt,
                    scheme=plan.scheme)
            oracle_cost = report.costs['oracle']
            if oracle_cost != 0:
                report.costs['relative_gap'] = \
                    (report.costs['learned'] - oracle_cost) / abs(oracle_cost)

    report.audit = list(run.plant.accesses)
    logger.info("learned K = %s, Ks = %s", fb.K.tolist(), ff.Ks.tolist())
    if not report.converged:
        logger.warning("run finished with unconverged loops: %s",
                       ", ".join(loop for loop, entry
                                 in report.convergence.items()
                                 if not entry['converged']))
    return report
