"""Model-free learning of ``(P, K, D'PD)``.

Integrating ``d(x'P_k x)`` along the sampled paths over the windows of a
``SamplingPlan`` and taking expectations removes A, B, C and D from the
policy-evaluation step. Each iteration then solves an overdetermined linear
system in the unknowns ``(svec(P_k), vec(Ktilde_k), svec(Lambda_k))`` built
from the data matrices of a ``FeedbackDataset``.

"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from mfsocial.exceptions import NumericalError
from mfsocial.exceptions import ValidationError
from mfsocial.linalg import as_matrix
from mfsocial.linalg import checked_inverse
from mfsocial.linalg import numerical_rank
from mfsocial.linalg import solve_least_squares
from mfsocial.linalg import symmetrize
from mfsocial.oracle import DEFAULT_MAX_ITER
from mfsocial.oracle import DEFAULT_XI
from mfsocial.oracle import FeedbackSolution
from mfsocial.oracle import IterationTrace
from mfsocial.oracle import NoConvergence

logger = logging.getLogger(__name__)

LAMBDA_CLIP = -1e-10
QUADRATURE_RULES = ('trapezoid', 'simpson')


class WindowOutsideGrid(ValidationError):
    pass


class RankConditionViolated(NumericalError):
    pass


def svec(P):
    """Half-vectorisation with doubled off-diagonal entries.

    >>> svec([[1.0, 2.0], [2.0, 3.0]]).tolist()
    [1.0, 4.0, 3.0]

    """
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    rows, cols = np.triu_indices(n)
    scale = np.where(rows == cols, 1.0, 2.0)
    return P[rows, cols] * scale


def smat(v):
    """Inverse of ``svec``."""
    v = np.asarray(v, dtype=float).ravel()
    n = int(round((np.sqrt(8 * v.size + 1) - 1) / 2))
    if n * (n + 1) // 2 != v.size:
        raise ValidationError("%d entries do not encode a symmetric matrix"
                              % v.size)
    rows, cols = np.triu_indices(n)
    scale = np.where(rows == cols, 1.0, 0.5)
    P = np.zeros((n, n))
    P[rows, cols] = v * scale
    P[cols, rows] = v * scale
    return P


def quad_features(x):
    """Monomials ``[x1^2, x1 x2, ..., x_n^2]`` paired with ``svec``.

    >>> quad_features([2.0, 3.0]).tolist()
    [4.0, 6.0, 9.0]

    """
    x = np.asarray(x, dtype=float)
    rows, cols = np.triu_indices(x.shape[-1])
    return x[..., rows] * x[..., cols]


@dataclass(frozen=True, eq=False)
class FeedbackDataset(object):
    delta_xhat: np.ndarray
    Ixx: np.ndarray
    Ixu: np.ndarray
    Iuhat: np.ndarray
    plan: object

    def __post_init__(self):
        rows = {block.shape[0] for block in
                (self.delta_xhat, self.Ixx, self.Ixu, self.Iuhat)}
        if len(rows) != 1:
            raise ValidationError("data blocks have different row counts")
        for block in (self.delta_xhat, self.Ixx, self.Ixu, self.Iuhat):
            if not np.all(np.isfinite(block)):
                raise ValidationError("data blocks have non-finite entries")

    @property
    def l(self):
        return self.Ixx.shape[0]

    @property
    def n(self):
        return int(round(np.sqrt(self.Ixx.shape[1])))

    @property
    def m(self):
        return self.Ixu.shape[1] // self.n

    def blocks(self):
        return {'delta_xhat': self.delta_xhat, 'Ixx': self.Ixx,
                'Ixu': self.Ixu, 'Iuhat': self.Iuhat}


def window_integrals(trace, plan, rule='trapezoid'):
    """Integrals of the grid signal `trace` (time along axis 0) over the
    plan's windows, as differences of its cumulative integral.

    """
    starts, ends = plan.window_indices()
    if ends[-1] >= trace.shape[0]:
        raise WindowOutsideGrid("window [%.6g, %.6g) is outside the "
                                "simulated grid" % (starts[-1] * plan.dt,
                                                    ends[-1] * plan.dt))
    if rule == 'trapezoid':
        cumulative = integrate.cumulative_trapezoid(trace, dx=plan.dt, axis=0,
                                                    initial=0)
    elif rule == 'simpson':
        cumulative = integrate.cumulative_simpson(trace, dx=plan.dt, axis=0,
                                                  initial=0)
    else:
        raise ValidationError("unknown quadrature rule %r" % rule)
    return cumulative[ends] - cumulative[starts]


def window_differences(trace, plan):
    starts, ends = plan.window_indices()
    if ends[-1] >= trace.shape[0]:
        raise WindowOutsideGrid("window end outside the simulated grid")
    return trace[ends] - trace[starts]


def build_feedback_dataset(ens, plan, rule='trapezoid'):
    """Data matrices of the feedback learner, with expectations replaced by
    the ensemble moment traces.

    """
    return FeedbackDataset(delta_xhat=window_differences(ens.mean_xhat, plan),
                           Ixx=window_integrals(ens.mean_xx, plan, rule),
                           Ixu=window_integrals(ens.mean_xu, plan, rule),
                           Iuhat=window_integrals(ens.mean_uhat, plan, rule),
                           plan=plan)


def feedback_rank_required(n, m):
    return n * (n + 1) // 2 + m * n + m * (m + 1) // 2


def check_rank_feedback(ds):
    stacked = np.hstack([ds.Ixx, ds.Ixu, ds.Iuhat])
    return numerical_rank(stacked) == feedback_rank_required(ds.n, ds.m)


def kron_policy_matrix(K):
    """Columns ``rho_i (x) rho_j`` for ``i <= j`` over the rows of `K`."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    m = K.shape[0]
    rows, cols = np.triu_indices(m)
    return np.column_stack([np.kron(K[i], K[j]) for i, j in zip(rows, cols)])


def _clip_lambda(Lambda):
    w, V = np.linalg.eigh(symmetrize(Lambda))
    w = np.where(w < LAMBDA_CLIP, 0.0, w)
    return symmetrize((V * w) @ V.T)


def irl_feedback_iterate(ds, K0, cost, xi=DEFAULT_XI,
                         max_iter=DEFAULT_MAX_ITER):
    """Learn ``(P, K, Lambda, Ktilde)`` from `ds`, starting from the gain
    `K0` the data were collected with.

    Only the designer-chosen weights Q and R are used besides the data.

    """
    n, m = ds.n, ds.m
    if not check_rank_feedback(ds):
        raise RankConditionViolated("the feedback data matrices do not "
                                    "satisfy the rank condition")
    K = as_matrix(K0, shape=(m, n), name='K0')
    Q, R = cost.Q, cost.R
    I = np.eye(n)
    p_size = n * (n + 1) // 2
    k_size = m * n

    trace = IterationTrace(loop='learned-feedback', gain='K')
    for k in range(1, max_iter + 1):
        Qk = Q + K.T @ R @ K
        Psi = np.hstack([ds.delta_xhat,
                         -2 * ds.Ixu - 2 * ds.Ixx @ np.kron(I, K.T),
                         -ds.Iuhat + ds.Ixx @ kron_policy_matrix(K)])
        Xi = -ds.Ixx @ Qk.reshape(-1, order='F')
        if numerical_rank(Psi) < Psi.shape[1]:
            raise RankConditionViolated("rank condition violated at "
                                        "iteration %d" % k)
        theta, residual = solve_least_squares(Psi, Xi)
        P = symmetrize(smat(theta[:p_size]))
        Ktilde = theta[p_size:p_size + k_size].reshape((m, n), order='F')
        Lambda = _clip_lambda(smat(theta[p_size + k_size:]))
        K_next = checked_inverse(R + Lambda, name='R + Lambda') @ Ktilde
        update = np.linalg.norm(K_next - K)
        trace.append(k, {'P': P, 'K': K_next, 'Lambda': Lambda,
                         'Ktilde': Ktilde}, update, residual)
        K = K_next
        if update <= xi:
            logger.info("feedback learning converged at k=%d (update %.2e)",
                        k, update)
            return FeedbackSolution(P=P, K=K, Lambda=Lambda,
                                    Ktilde=Ktilde), trace
    raise NoConvergence("feedback learning did not converge in %d iterations"
                        % max_iter, trace)
