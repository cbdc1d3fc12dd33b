"""Model-based ground truth.

Generalised Lyapunov solves, the two policy iterations (one for the
stochastic ARE in P, one for the indefinite ARE in S = Pi - P) and the
spectral tests around them. The learners are validated against this module;
it is also what seeds and checks stabilising gains.

Lyapunov operators are handled through their full n^2 x n^2 Kronecker
representation. That costs O(n^6) and is meant for the small state
dimensions this package targets.

"""
import logging
from dataclasses import dataclass
from dataclasses import field

import numpy as np
import scipy.linalg

from mfsocial.exceptions import NumericalError
from mfsocial.exceptions import ValidationError
from mfsocial.linalg import as_matrix
from mfsocial.linalg import checked_inverse
from mfsocial.linalg import numerical_rank
from mfsocial.linalg import symmetrize
from mfsocial.models import check_dimensions
from mfsocial.models import gamma_weight
from mfsocial.models import upsilon

logger = logging.getLogger(__name__)

EPS_HURWITZ = 1e-10
LYAPUNOV_MAX_COND = 1e12
RESIDUAL_TOL = 1e-8
DEFAULT_XI = 1e-4
DEFAULT_MAX_ITER = 50


class NotAStabilizer(ValidationError):
    pass


class NonStabilizingClosedLoop(NumericalError):
    pass


class NotHurwitz(NumericalError):
    pass


class NoConvergence(NumericalError):
    def __init__(self, message, trace=None):
        super(NoConvergence, self).__init__(message)
        self.trace = trace


@dataclass(frozen=True, eq=False)
class FeedbackSolution(object):
    """``P``, the feedback gain ``K``, ``Lambda = D'PD`` and
    ``Ktilde = (R + Lambda) K``.

    """
    P: np.ndarray
    K: np.ndarray
    Lambda: np.ndarray
    Ktilde: np.ndarray

    def upsilon(self, R):
        return symmetrize(np.asarray(R, dtype=float) + self.Lambda)

    @classmethod
    def from_gains(cls, K, Lambda, R, P=None):
        """A feedback pair known only through ``K`` and ``Lambda``, such as
        a learned estimate. ``P`` stays None unless given.

        """
        K = as_matrix(K, name='K')
        m = K.shape[0]
        Lambda = symmetrize(as_matrix(Lambda, shape=(m, m), name='Lambda'))
        if P is not None:
            P = symmetrize(as_matrix(P, shape=(K.shape[1],) * 2, name='P'))
        Ktilde = (np.asarray(R, dtype=float) + Lambda) @ K
        return cls(P=P, K=K, Lambda=Lambda, Ktilde=Ktilde)

    def to_document(self):
        return {'P': None if self.P is None else self.P.tolist(),
                'K': self.K.tolist(),
                'Lambda': self.Lambda.tolist(), 'Ktilde': self.Ktilde.tolist()}


@dataclass(frozen=True, eq=False)
class FeedforwardSolution(object):
    """``S``, the feedforward gain ``Ks`` and ``Pi = P + S`` (None when no P
    was available).

    """
    S: np.ndarray
    Ks: np.ndarray
    Pi: np.ndarray = None

    def to_document(self):
        return {'S': self.S.tolist(), 'Ks': self.Ks.tolist(),
                'Pi': None if self.Pi is None else self.Pi.tolist()}


@dataclass(frozen=True, eq=False)
class IterationRecord(object):
    k: int
    snapshot: dict
    update_norm: float
    residual_norm: float


@dataclass
class IterationTrace(object):
    """Per-iteration progress of one of the policy iterations. `gain` names
    the snapshot entry that `update_norm` is measured on.

    """
    loop: str
    gain: str
    records: list = field(default_factory=list)

    def append(self, k, snapshot, update_norm, residual_norm):
        record = IterationRecord(k, snapshot, float(update_norm),
                                 float(residual_norm))
        self.records.append(record)
        logger.debug("%s: k=%d update=%.3e residual=%.3e", self.loop, k,
                     record.update_norm, record.residual_norm)
        return record

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def final(self):
        return self.records[-1]

    def series(self, name):
        return [record.snapshot[name] for record in self.records]

    def to_rows(self):
        rows = []
        for record in self.records:
            row = {'loop': self.loop, 'k': record.k,
                   'update_norm': record.update_norm,
                   'residual_norm': record.residual_norm}
            gain = np.atleast_2d(record.snapshot[self.gain])
            for (i, j), value in np.ndenumerate(gain):
                row['g%d%d' % (i + 1, j + 1)] = float(value)
            rows.append(row)
        return rows


def _vec(M):
    return np.asarray(M, dtype=float).reshape(-1, order='F')


def _unvec(v, n):
    return np.asarray(v).reshape((n, n), order='F')


def lyapunov_operator(Acl, Ccl):
    """Matrix of ``X -> Acl'X + X Acl + Ccl'X Ccl`` acting on ``vec(X)``."""
    n = Acl.shape[0]
    I = np.eye(n)
    return (np.kron(I, Acl.T) + np.kron(Acl.T, I) + np.kron(Ccl.T, Ccl.T))


def solve_generalized_lyapunov(Acl, Ccl, W):
    """Return the symmetric X with ``Acl'X + X Acl + Ccl'X Ccl + W = 0``.

    >>> import numpy as np
    >>> X = solve_generalized_lyapunov(-np.eye(2), np.zeros((2, 2)), np.eye(2))
    >>> bool(np.allclose(X, np.eye(2) / 2))
    True

    """
    Acl = as_matrix(Acl, name='Acl')
    n = Acl.shape[0]
    Ccl = as_matrix(Ccl, shape=(n, n), name='Ccl')
    W = as_matrix(W, shape=(n, n), name='W')
    L = lyapunov_operator(Acl, Ccl)
    if not np.linalg.cond(L) <= LYAPUNOV_MAX_COND:
        raise NonStabilizingClosedLoop(
            "non-stabilizing closed loop: the Lyapunov operator is singular")
    lu = scipy.linalg.lu_factor(L)
    X = _unvec(scipy.linalg.lu_solve(lu, -_vec(W)), n)
    return symmetrize(X)


def is_hurwitz(M, eps=EPS_HURWITZ):
    M = as_matrix(M, name='M')
    return bool(np.max(np.linalg.eigvals(M).real) < -eps)


def ms_spectral_abscissa(K, dyn):
    """Spectral abscissa of ``X -> Acl X + X Acl' + Ccl X Ccl'`` for the
    closed loop under ``u = -K x``.

    """
    K = as_matrix(K, shape=(dyn.m, dyn.n), name='K')
    Acl = dyn.A - dyn.B @ K
    Ccl = dyn.C - dyn.D @ K
    I = np.eye(dyn.n)
    L = np.kron(I, Acl) + np.kron(Acl, I) + np.kron(Ccl, Ccl)
    return float(np.max(np.linalg.eigvals(L).real))


def is_ms_stabilizer(K, dyn):
    return ms_spectral_abscissa(K, dyn) < 0.0


def sare_residual(P, dyn, cost):
    """Residual of the stochastic ARE at `P`."""
    P = as_matrix(P, shape=(dyn.n, dyn.n), name='P')
    A, B, C, D = dyn.A, dyn.B, dyn.C, dyn.D
    Ups = checked_inverse(upsilon(P, dyn, cost), name='R + D\'PD')
    G = B.T @ P + D.T @ P @ C
    return symmetrize(A.T @ P + P @ A + C.T @ P @ C - G.T @ Ups @ G + cost.Q)


def gain_from_value(P, dyn, cost):
    """``(R + D'PD)^-1 (B'P + D'PC)``."""
    P = as_matrix(P, shape=(dyn.n, dyn.n), name='P')
    Ups = upsilon(P, dyn, cost)
    G = dyn.B.T @ P + dyn.D.T @ P @ dyn.C
    checked_inverse(Ups, name='R + D\'PD')
    return np.linalg.solve(Ups, G)


def indefinite_are_residual(S, fb, dyn, cost):
    """Residual of ``(A-BK)'S + S(A-BK) - S B Ups^-1 B'S - QGamma``."""
    S = as_matrix(S, shape=(dyn.n, dyn.n), name='S')
    Acl = dyn.A - dyn.B @ fb.K
    Ups = fb.upsilon(cost.R)
    BS = dyn.B.T @ S
    QGamma = gamma_weight(cost).QGamma
    return symmetrize(Acl.T @ S + S @ Acl
                      - BS.T @ np.linalg.solve(Ups, BS) - QGamma)


def second_are_residual(Pi, P, dyn, cost):
    """Residual of the untransformed ARE for ``Pi``; zero at ``Pi = P + S``."""
    Pi = as_matrix(Pi, shape=(dyn.n, dyn.n), name='Pi')
    P = as_matrix(P, shape=(dyn.n, dyn.n), name='P')
    A, B, C, D = dyn.A, dyn.B, dyn.C, dyn.D
    Ups = upsilon(P, dyn, cost)
    G = B.T @ Pi + D.T @ P @ C
    QGamma = gamma_weight(cost).QGamma
    return symmetrize(A.T @ Pi + Pi @ A - G.T @ np.linalg.solve(Ups, G)
                      + C.T @ P @ C + cost.Q - QGamma)


def pi_feedback(dyn, cost, K0, xi=DEFAULT_XI, max_iter=DEFAULT_MAX_ITER,
                residual_tol=RESIDUAL_TOL):
    """Policy iteration for the stochastic ARE, started from the stabiliser
    `K0`.

    Stops once the gain increment is at most `xi` and the ARE residual is at
    most `residual_tol` (spectral norm). Returns the solution and the trace.

    """
    check_dimensions(dyn, cost)
    K = as_matrix(K0, shape=(dyn.m, dyn.n), name='K0')
    if not is_ms_stabilizer(K, dyn):
        raise NotAStabilizer("K0 is not a mean-square stabilizer")

    A, B, C, D, R = dyn.A, dyn.B, dyn.C, dyn.D, cost.R
    trace = IterationTrace(loop='oracle-feedback', gain='K')
    for k in range(1, max_iter + 1):
        Qk = cost.Q + K.T @ R @ K
        P = solve_generalized_lyapunov(A - B @ K, C - D @ K, Qk)
        Lambda = symmetrize(D.T @ P @ D)
        Ktilde = B.T @ P + D.T @ P @ C
        K_next = np.linalg.solve(R + Lambda, Ktilde)
        update = np.linalg.norm(K_next - K)
        residual = np.linalg.norm(sare_residual(P, dyn, cost), 2)
        trace.append(k, {'P': P, 'K': K_next, 'Lambda': Lambda}, update,
                     residual)
        K = K_next
        if update <= xi and residual <= residual_tol:
            logger.info("oracle feedback iteration converged at k=%d", k)
            solution = FeedbackSolution(P=P, K=K, Lambda=Lambda,
                                        Ktilde=Ktilde)
            return solution, trace
    raise NoConvergence("feedback policy iteration did not converge in %d "
                        "iterations" % max_iter, trace)


def pi_feedforward(dyn, cost, fb, xi=DEFAULT_XI, max_iter=DEFAULT_MAX_ITER,
                   residual_tol=RESIDUAL_TOL):
    """Policy iteration for the indefinite ARE in ``S``, started from
    ``Ks = 0`` with the feedback gain of `fb` held fixed.

    """
    check_dimensions(dyn, cost)
    A, B = dyn.A, dyn.B
    if not is_hurwitz(A - B @ fb.K):
        raise NotHurwitz("A - BK is not Hurwitz; the feedback gain is not a "
                         "stabilizer")
    Ups = fb.upsilon(cost.R)
    QGamma = gamma_weight(cost).QGamma
    zero = np.zeros((dyn.n, dyn.n))
    Ks = np.zeros((dyn.m, dyn.n))

    trace = IterationTrace(loop='oracle-feedforward', gain='Ks')
    for k in range(1, max_iter + 1):
        Atilde = A - B @ (fb.K + Ks)
        if not is_hurwitz(Atilde):
            raise NotHurwitz("A - B(K + Ks) lost the Hurwitz property at "
                             "k=%d" % k)
        QGamma_k = -QGamma + Ks.T @ Ups @ Ks
        S = solve_generalized_lyapunov(Atilde, zero, QGamma_k)
        Ks_next = np.linalg.solve(Ups, B.T @ S)
        update = np.linalg.norm(Ks_next - Ks)
        residual = np.linalg.norm(indefinite_are_residual(S, fb, dyn, cost), 2)
        trace.append(k, {'S': S, 'Ks': Ks_next, 'Atilde': Atilde}, update,
                     residual)
        Ks = Ks_next
        if update <= xi and residual <= residual_tol:
            logger.info("oracle feedforward iteration converged at k=%d", k)
            Pi = None if fb.P is None else symmetrize(fb.P + S)
            solution = FeedforwardSolution(S=S, Ks=Ks, Pi=Pi)
            return solution, trace
    raise NoConvergence("feedforward policy iteration did not converge in %d "
                        "iterations" % max_iter, trace)


def exact_observability_diagnostic(dyn, Qroot, tol=1e-8):
    """Heuristic spectral test of exact observability of ``[A, C; Qroot]``.

    Sweeps the eigenvectors of ``X -> XA' + AX + CXC'`` and reports False if
    one of them, symmetrised and normalised, is annihilated by `Qroot`.

    """
    n = dyn.n
    Qroot = as_matrix(Qroot, shape=(n, n), name='Qroot')
    A, C = dyn.A, dyn.C
    I = np.eye(n)
    L = np.kron(I, A) + np.kron(A, I) + np.kron(C, C)
    _, vectors = np.linalg.eig(L)
    for v in vectors.T:
        X = _unvec(v, n)
        X = (X + X.T) / 2.0
        norm = np.linalg.norm(X)
        if norm < 1e-12:
            continue
        if np.linalg.norm(Qroot @ (X / norm)) <= tol:
            return False
    return True


def is_observable(A, F):
    """Classical PBH test for the pair ``(A, F)``."""
    A = as_matrix(A, name='A')
    n = A.shape[0]
    F = as_matrix(F, name='F')
    for eigenvalue in np.linalg.eigvals(A):
        pencil = np.vstack([eigenvalue * np.eye(n) - A, F])
        if numerical_rank(pencil, rtol=1e-10) < n:
            return False
    return True
