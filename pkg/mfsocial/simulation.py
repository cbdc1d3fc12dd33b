"""Sample paths of the agent SDE under affine policies.

Paths are integrated in batches with Euler-Maruyama; every path owns a
random stream seeded from ``base_seed + path index`` so a path does not
depend on which batch or worker produced it. When the diffusion vanishes
(C = D = 0) the ``auto`` scheme integrates the ODE with an adaptive
high-order solver instead, which is what the exact-data checks rely on.

Ensembles do not keep every path. They stream the first and second moment
traces the learners need and retain only the first ``keep_paths`` paths.

"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from dataclasses import field
from dataclasses import replace
from functools import cached_property

import numpy as np
from scipy.integrate import solve_ivp

from mfsocial.exceptions import NumericalError
from mfsocial.exceptions import ValidationError
from mfsocial.linalg import as_matrix

logger = logging.getLogger(__name__)

DIVERGENCE_NORM = 1e9
GRID_TOL = 1e-12
CHUNK_STEPS = 1000
SCHEMES = ('auto', 'euler-maruyama', 'ode')


class TrajectoryDiverged(NumericalError):
    pass


class InvalidPlan(ValidationError):
    pass


def _is_multiple(value, dt):
    return abs(value - round(value / dt) * dt) <= GRID_TOL


@dataclass(frozen=True)
class SamplingPlan(object):
    """Simulation grid and the ``l`` learning windows ``[t_j, t_j + T)`` with
    ``t_j = t1 + (j - 1) Ts``.

    """
    t1: float = 0.0
    Ts: float = 0.001
    T: float = 0.9
    l: int = 9101
    dt: float = 0.001
    horizon: float = 10.0
    scheme: str = 'auto'

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidPlan("dt must be positive")
        if self.Ts <= 0 or self.T <= 0:
            raise InvalidPlan("Ts and T must be positive")
        for name in ('t1', 'Ts', 'T'):
            if not _is_multiple(getattr(self, name), self.dt):
                raise InvalidPlan("%s must be an integer multiple of dt"
                                  % name)
        if self.l < 1:
            raise InvalidPlan("l must be at least 1")
        if self.t1 < 0:
            raise InvalidPlan("t1 must be non-negative")
        last = self.t1 + (self.l - 1) * self.Ts + self.T
        if last > self.horizon + GRID_TOL:
            raise InvalidPlan("the last window ends at %.6g s, after the "
                              "horizon %.6g s" % (last, self.horizon))
        if self.scheme not in SCHEMES:
            raise InvalidPlan("unknown integration scheme %r" % self.scheme)

    @property
    def steps(self):
        return int(math.floor(self.horizon / self.dt + 1e-6))

    @property
    def times(self):
        return np.arange(self.steps + 1) * self.dt

    def window_indices(self):
        """Grid indices of the window starts and ends."""
        starts = (self.t1 + np.arange(self.l) * self.Ts) / self.dt
        starts = np.rint(starts).astype(int)
        ends = starts + int(round(self.T / self.dt))
        return starts, ends

    @property
    def max_windows(self):
        """Largest ``l`` whose windows still fit in the horizon."""
        span = self.horizon - self.t1 - self.T
        return int(math.floor(span / self.Ts + 1e-6)) + 1

    def with_windows(self, l):
        return replace(self, l=int(l))

    def check_rank_bound(self, required):
        if self.l < required:
            raise InvalidPlan("l = %d windows cannot reach the required rank "
                              "%d" % (self.l, required))

    def to_document(self):
        return {'t1': self.t1, 'Ts': self.Ts, 'T': self.T, 'l': self.l,
                'dt': self.dt, 'horizon': self.horizon, 'scheme': self.scheme}


@dataclass(frozen=True)
class NoiseSpec(object):
    """Exploration signal: per input channel, a sum of `J` sinusoids whose
    frequencies are drawn once, uniformly from ``[freq_lo, freq_hi]``.

    """
    mode: str = 'sinusoids'
    J: int = 100
    freq_lo: float = -100.0
    freq_hi: float = 100.0
    amplitude: float = 1.0
    seed: int = 0
    channels: int = 1

    def __post_init__(self):
        if self.mode not in ('sinusoids', 'none'):
            raise ValidationError("unknown exploration mode %r" % self.mode)
        if self.mode == 'sinusoids':
            if self.J < 1:
                raise ValidationError("J must be at least 1")
            if not self.freq_lo < self.freq_hi:
                raise ValidationError("freq_lo must be below freq_hi")

    @cached_property
    def frequencies(self):
        rng = np.random.default_rng(self.seed)
        return rng.uniform(self.freq_lo, self.freq_hi,
                           size=(self.channels, self.J))

    def to_document(self):
        return {'mode': self.mode, 'J': self.J, 'freq_lo': self.freq_lo,
                'freq_hi': self.freq_hi, 'amplitude': self.amplitude,
                'seed': self.seed}


def exploration_noise(spec, t):
    """Value of the exploration signal at `t`: an m-vector for scalar `t`,
    an array of shape ``(len(t), m)`` for an array of times.

    """
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if spec is None or spec.mode == 'none':
        values = np.zeros((t.size, spec.channels if spec else 1))
    else:
        phases = t[:, None, None] * spec.frequencies[None, :, :]
        values = spec.amplitude * np.sin(phases).sum(axis=2)
    return values[0] if scalar else values


@dataclass(frozen=True, eq=False)
class AffinePolicy(object):
    """``u = -K x - u_ff(t) + l(t)``.

    `feedforward` is a callable mapping an array of times to an array of
    shape ``(len(times), m)``; `exploration` is a ``NoiseSpec``.

    """
    K: np.ndarray
    feedforward: object = None
    exploration: NoiseSpec = None

    def offsets(self, times):
        times = np.atleast_1d(np.asarray(times, dtype=float))
        m = self.K.shape[0]
        values = np.zeros((times.size, m))
        if self.feedforward is not None:
            values -= np.asarray(self.feedforward(times)).reshape(times.size, m)
        if self.exploration is not None and self.exploration.mode != 'none':
            values += exploration_noise(self.exploration, times)
        return values


@dataclass(frozen=True)
class InitialStateSampler(object):
    """Initial states uniform on ``mean +- half_width`` per coordinate."""
    mean: tuple
    half_width: float = 0.0

    def sample(self, rng):
        mean = np.asarray(self.mean, dtype=float)
        if self.half_width == 0:
            return mean.copy()
        return rng.uniform(mean - self.half_width, mean + self.half_width)


@dataclass(frozen=True, eq=False)
class Trajectory(object):
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    path_id: int = 0
    seed: int = 0


@dataclass(eq=False)
class Ensemble(object):
    """Moment traces of `count` sample paths on the grid `times`.

    ``mean_xx`` and ``mean_xu`` hold E[x (x) x] and E[x (x) u] in Kronecker
    order, ``mean_uhat`` the quadratic features of u.

    """
    times: np.ndarray
    count: int
    mean_state: np.ndarray
    mean_input: np.ndarray
    mean_xx: np.ndarray
    mean_xu: np.ndarray
    mean_uhat: np.ndarray
    paths: list = field(default_factory=list)

    @property
    def n(self):
        return self.mean_state.shape[1]

    @property
    def m(self):
        return self.mean_input.shape[1]

    @property
    def mean_xhat(self):
        return self.mean_xx[:, _upper_kron_indices(self.n)]


def _upper_kron_indices(n):
    rows, cols = np.triu_indices(n)
    return rows * n + cols


def _quadratic_features(V):
    """Row-wise quadratic features of the last axis of `V`."""
    k = V.shape[-1]
    rows, cols = np.triu_indices(k)
    return V[..., rows] * V[..., cols]


class MomentAccumulator(object):
    """Per-time sums over paths, combined in batch order."""

    def __init__(self, length, n, m):
        self.count = 0
        self.sum_x = np.zeros((length, n))
        self.sum_u = np.zeros((length, m))
        self.sum_xx = np.zeros((length, n * n))
        self.sum_xu = np.zeros((length, n * m))
        self.sum_uhat = np.zeros((length, m * (m + 1) // 2))

    def update(self, start, X, U):
        stop = start + X.shape[0]
        c, _, n = X.shape
        m = U.shape[2]
        self.sum_x[start:stop] += X.sum(axis=1)
        self.sum_u[start:stop] += U.sum(axis=1)
        self.sum_xx[start:stop] += np.einsum('cbi,cbj->cij', X, X).reshape(
            c, n * n)
        self.sum_xu[start:stop] += np.einsum('cbi,cbj->cij', X, U).reshape(
            c, n * m)
        self.sum_uhat[start:stop] += _quadratic_features(U).sum(axis=1)

    def merge(self, other):
        self.count += other.count
        for name in ('sum_x', 'sum_u', 'sum_xx', 'sum_xu', 'sum_uhat'):
            getattr(self, name)[...] += getattr(other, name)


class PathRecorder(object):
    def __init__(self, length, batch, n, m, keep):
        self.keep = min(keep, batch)
        self.states = np.zeros((length, self.keep, n))
        self.inputs = np.zeros((length, self.keep, m))

    def update(self, start, X, U):
        stop = start + X.shape[0]
        self.states[start:stop] = X[:, :self.keep]
        self.inputs[start:stop] = U[:, :self.keep]


def _check_divergence(X):
    with np.errstate(over='ignore', invalid='ignore'):
        norms = np.sqrt(np.einsum('...i,...i->...', X, X))
    if not np.all(np.isfinite(norms)) or np.max(norms) > DIVERGENCE_NORM:
        raise TrajectoryDiverged("trajectory diverged (|x| > %.0e)"
                                 % DIVERGENCE_NORM)


def _resolve_scheme(dyn, plan):
    if plan.scheme != 'auto':
        return plan.scheme
    if not np.any(dyn.C) and not np.any(dyn.D):
        return 'ode'
    return 'euler-maruyama'


def integrate_batch(dyn, policy, X0, rngs, plan, observers):
    """Integrate the paths with initial states `X0` (rows) on the plan's
    grid and feed chunks ``(start, states, inputs)`` of shape
    ``(chunk, batch, n)`` / ``(chunk, batch, m)`` to every observer.

    `rngs` holds one generator per path and is ignored by the ODE scheme.

    """
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    K = as_matrix(policy.K, shape=(dyn.m, dyn.n), name='K')
    times = plan.times
    offsets = policy.offsets(times)
    if _resolve_scheme(dyn, plan) == 'ode':
        _integrate_ode(dyn, policy, K, X0, times, offsets, observers)
    else:
        _integrate_euler_maruyama(dyn, K, X0, rngs, plan, offsets, observers)


def _integrate_euler_maruyama(dyn, K, X0, rngs, plan, offsets, observers):
    A, B, C, D = dyn.A, dyn.B, dyn.C, dyn.D
    dt = plan.dt
    sqrt_dt = math.sqrt(dt)
    length = plan.steps + 1
    batch, n = X0.shape
    m = K.shape[0]
    X = X0.copy()

    for start in range(0, length, CHUNK_STEPS):
        stop = min(start + CHUNK_STEPS, length)
        c = stop - start
        states = np.empty((c, batch, n))
        inputs = np.empty((c, batch, m))
        # The last grid point needs no increment.
        draws = min(c, length - 1 - start)
        z = np.stack([rng.standard_normal(draws) for rng in rngs], axis=1)
        with np.errstate(over='ignore', invalid='ignore'):
            for i in range(c):
                U = offsets[start + i] - X @ K.T
                states[i] = X
                inputs[i] = U
                if i < draws:
                    drift = X @ A.T + U @ B.T
                    diffusion = X @ C.T + U @ D.T
                    X = X + drift * dt + diffusion * (sqrt_dt * z[i][:, None])
        _check_divergence(states)
        for observer in observers:
            observer.update(start, states, inputs)


def _integrate_ode(dyn, policy, K, X0, times, offsets, observers):
    A, B = dyn.A, dyn.B
    batch, n = X0.shape
    Acl = A - B @ K

    def rhs(t, y):
        X = y.reshape(batch, n)
        u_offset = policy.offsets(np.array([t]))[0]
        return (X @ Acl.T + u_offset @ B.T).ravel()

    solution = solve_ivp(rhs, (times[0], times[-1]), X0.ravel(),
                         method='DOP853', t_eval=times, rtol=1e-12,
                         atol=1e-12)
    if not solution.success:
        raise NumericalError("ODE integration failed: %s" % solution.message)
    states = solution.y.T.reshape(len(times), batch, n)
    _check_divergence(states)
    inputs = offsets[:, None, :] - np.einsum('tbi,ji->tbj', states, K)
    for observer in observers:
        observer.update(0, states, inputs)


def simulate_path(dyn, policy, x0, plan, seed, path_id=0):
    """One Euler-Maruyama (or ODE) sample path from `x0`."""
    x0 = np.asarray(x0, dtype=float).reshape(1, dyn.n)
    recorder = PathRecorder(plan.steps + 1, 1, dyn.n, dyn.m, keep=1)
    integrate_batch(dyn, policy, x0, [np.random.default_rng(seed)], plan,
                    [recorder])
    return Trajectory(times=plan.times, states=recorder.states[:, 0],
                      inputs=recorder.inputs[:, 0], path_id=path_id,
                      seed=seed)


def initial_state(x0_sampler, seed):
    """Initial state of the path with seed `seed`; `x0_sampler` is either an
    ``InitialStateSampler`` or a fixed vector.

    """
    if isinstance(x0_sampler, InitialStateSampler):
        return x0_sampler.sample(np.random.default_rng([seed, 1]))
    return np.asarray(x0_sampler, dtype=float).copy()


def simulate_ensemble(dyn, policy, x0_sampler, plan, M, base_seed,
                      keep_paths=None, workers=1, batch_size=250):
    """Simulate `M` paths with seeds ``base_seed + 0 .. M - 1`` and return
    their moment traces.

    Batches may run on a thread pool of `workers`; their sums are combined
    in batch order, so the result does not depend on `workers`.

    """
    if M < 1:
        raise ValidationError("the ensemble needs at least one path")
    keep_paths = M if keep_paths is None else min(keep_paths, M)
    length = plan.steps + 1
    seeds = [base_seed + i for i in range(M)]
    batches = [seeds[i:i + batch_size] for i in range(0, M, batch_size)]

    def run(batch_seeds):
        X0 = np.array([initial_state(x0_sampler, s) for s in batch_seeds])
        X0 = X0.reshape(len(batch_seeds), dyn.n)
        rngs = [np.random.default_rng(s) for s in batch_seeds]
        moments = MomentAccumulator(length, dyn.n, dyn.m)
        moments.count = len(batch_seeds)
        observers = [moments]
        first = batch_seeds[0] - base_seed
        recorder = None
        if first < keep_paths:
            recorder = PathRecorder(length, len(batch_seeds), dyn.n, dyn.m,
                                    keep=keep_paths - first)
            observers.append(recorder)
        integrate_batch(dyn, policy, X0, rngs, plan, observers)
        return moments, recorder

    if workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, batches))
    else:
        results = [run(batch) for batch in batches]

    total = MomentAccumulator(length, dyn.n, dyn.m)
    paths = []
    for batch_seeds, (moments, recorder) in zip(batches, results):
        total.merge(moments)
        if recorder is None:
            continue
        for j in range(recorder.keep):
            seed = batch_seeds[j]
            paths.append(Trajectory(times=plan.times,
                                    states=recorder.states[:, j].copy(),
                                    inputs=recorder.inputs[:, j].copy(),
                                    path_id=seed - base_seed, seed=seed))

    logger.debug("simulated %d paths over %d grid points", M, length)
    count = float(total.count)
    return Ensemble(times=plan.times, count=total.count,
                    mean_state=total.sum_x / count,
                    mean_input=total.sum_u / count,
                    mean_xx=total.sum_xx / count,
                    mean_xu=total.sum_xu / count,
                    mean_uhat=total.sum_uhat / count,
                    paths=paths)
