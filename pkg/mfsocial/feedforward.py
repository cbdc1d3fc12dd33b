"""Model-free learning of ``(S, Ks)`` from the ensemble-mean path.

The mean path obeys ``d xbar = (A xbar + B ubar) dt``, so the same windows
that feed the feedback learner give a second linear system in
``(svec(S_k), vec(Ks_k))``. The weight ``Upsilon = R + Lambda`` comes from the
feedback learner, never from the model.

"""
import logging
from dataclasses import dataclass

import numpy as np

from mfsocial.exceptions import ValidationError
from mfsocial.feedback import RankConditionViolated
from mfsocial.feedback import smat
from mfsocial.feedback import quad_features
from mfsocial.feedback import window_differences
from mfsocial.feedback import window_integrals
from mfsocial.linalg import as_matrix
from mfsocial.linalg import is_pd
from mfsocial.linalg import numerical_rank
from mfsocial.linalg import solve_least_squares
from mfsocial.linalg import symmetrize
from mfsocial.oracle import DEFAULT_MAX_ITER
from mfsocial.oracle import DEFAULT_XI
from mfsocial.oracle import FeedforwardSolution
from mfsocial.oracle import IterationTrace
from mfsocial.oracle import NoConvergence

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FeedforwardDataset(object):
    delta_xbarhat: np.ndarray
    Ixbarxbar: np.ndarray
    Ixbarubar: np.ndarray
    plan: object

    def __post_init__(self):
        blocks = (self.delta_xbarhat, self.Ixbarxbar, self.Ixbarubar)
        if len({block.shape[0] for block in blocks}) != 1:
            raise ValidationError("data blocks have different row counts")
        if not all(np.all(np.isfinite(block)) for block in blocks):
            raise ValidationError("data blocks have non-finite entries")

    @property
    def l(self):
        return self.Ixbarxbar.shape[0]

    @property
    def n(self):
        return int(round(np.sqrt(self.Ixbarxbar.shape[1])))

    @property
    def m(self):
        return self.Ixbarubar.shape[1] // self.n

    def blocks(self):
        return {'delta_xbarhat': self.delta_xbarhat,
                'Ixbarxbar': self.Ixbarxbar, 'Ixbarubar': self.Ixbarubar}


def build_feedforward_dataset(ens, plan, rule='trapezoid'):
    """Data matrices of the feedforward learner from the mean state and mean
    input traces of `ens`.

    """
    xbar = ens.mean_state
    ubar = ens.mean_input
    n, m = xbar.shape[1], ubar.shape[1]
    xx = np.einsum('ti,tj->tij', xbar, xbar).reshape(-1, n * n)
    xu = np.einsum('ti,tj->tij', xbar, ubar).reshape(-1, n * m)
    return FeedforwardDataset(
        delta_xbarhat=window_differences(quad_features(xbar), plan),
        Ixbarxbar=window_integrals(xx, plan, rule),
        Ixbarubar=window_integrals(xu, plan, rule),
        plan=plan)


def feedforward_rank_required(n, m):
    return n * (n + 1) // 2 + m * n


def check_rank_feedforward(ds):
    stacked = np.hstack([ds.Ixbarxbar, ds.Ixbarubar])
    return numerical_rank(stacked) == feedforward_rank_required(ds.n, ds.m)


def irl_feedforward_iterate(ds, Khat, Upsilon_hat, QGamma, xi=DEFAULT_XI,
                            max_iter=DEFAULT_MAX_ITER, P=None):
    """Learn ``(S, Ks)`` from `ds` starting at ``Ks = 0``.

    `Khat` and `Upsilon_hat` are the outputs of the feedback learner. When
    the learned `P` is given the solution also carries ``Pi = P + S``.

    """
    n, m = ds.n, ds.m
    if not check_rank_feedforward(ds):
        raise RankConditionViolated("the feedforward data matrices do not "
                                    "satisfy the rank condition")
    K = as_matrix(Khat, shape=(m, n), name='Khat')
    Ups = as_matrix(Upsilon_hat, shape=(m, m), name='Upsilon_hat')
    if not is_pd(Ups):
        raise ValidationError("Upsilon_hat must be symmetric positive "
                              "definite")
    QGamma = as_matrix(QGamma, shape=(n, n), name='QGamma')
    I = np.eye(n)
    s_size = n * (n + 1) // 2
    input_block = -2 * ds.Ixbarubar @ np.kron(I, Ups)
    Ks = np.zeros((m, n))

    trace = IterationTrace(loop='learned-feedforward', gain='Ks')
    for k in range(1, max_iter + 1):
        QGamma_k = -QGamma + Ks.T @ Ups @ Ks
        Phi = np.hstack([ds.delta_xbarhat,
                         input_block
                         - 2 * ds.Ixbarxbar @ np.kron(I, (Ups @ (Ks + K)).T)])
        Theta = -ds.Ixbarxbar @ QGamma_k.reshape(-1, order='F')
        if numerical_rank(Phi) < Phi.shape[1]:
            raise RankConditionViolated("rank condition violated at "
                                        "iteration %d" % k)
        theta, residual = solve_least_squares(Phi, Theta)
        S = symmetrize(smat(theta[:s_size]))
        Ks_next = theta[s_size:].reshape((m, n), order='F')
        update = np.linalg.norm(Ks_next - Ks)
        trace.append(k, {'S': S, 'Ks': Ks_next}, update, residual)
        Ks = Ks_next
        if update <= xi:
            logger.info("feedforward learning converged at k=%d (update "
                        "%.2e)", k, update)
            Pi = None if P is None else symmetrize(np.asarray(P) + S)
            return FeedforwardSolution(S=S, Ks=Ks, Pi=Pi), trace
    raise NoConvergence("feedforward learning did not converge in %d "
                        "iterations" % max_iter, trace)
