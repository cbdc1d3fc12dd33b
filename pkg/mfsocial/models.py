"""Problem definition: agent dynamics, social cost weights and the checks on
the standing assumptions.

Every agent follows the scalar-Brownian SDE

    dx = (A x + B u) dt + (C x + D u) dw

and pays ``E int |x - Gamma x_(N)|^2_Q + |u|^2_R dt`` where x_(N) is the
population average.

"""
from dataclasses import dataclass
from dataclasses import field

import numpy as np

from mfsocial.exceptions import DimensionMismatch
from mfsocial.linalg import EPS_PSD
from mfsocial.linalg import as_matrix
from mfsocial.linalg import is_pd
from mfsocial.linalg import is_psd
from mfsocial.linalg import psd_sqrt
from mfsocial.linalg import symmetrize


def _freeze(array):
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class SystemDynamics(object):
    """The four model matrices of the agent SDE.

    Only the simulator and the model-based oracle read these; the learners
    never receive them.

    """
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A = as_matrix(self.A, name='A')
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionMismatch("A must be square, got %s" % (A.shape, ))
        B = as_matrix(self.B, name='B')
        if B.shape[0] != n and B.shape == (1, n):
            # A row given for a single-input system with n > 1.
            B = B.T
        if B.shape[0] != n:
            raise DimensionMismatch("B must have %d rows" % n)
        m = B.shape[1]
        C = as_matrix(self.C, shape=(n, n), name='C')
        D = as_matrix(self.D, name='D')
        if D.shape == (1, n) and m == 1 and n > 1:
            D = D.T
        if D.shape != (n, m):
            raise DimensionMismatch("D has shape %s, expected %s"
                                    % (D.shape, (n, m)))
        for name, value in (('A', A), ('B', B), ('C', C), ('D', D)):
            object.__setattr__(self, name, _freeze(value))

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    def to_document(self):
        return {'A': self.A.tolist(), 'B': self.B.tolist(),
                'C': self.C.tolist(), 'D': self.D.tolist()}


@dataclass(frozen=True, eq=False)
class CostSpec(object):
    """Weights of the social cost. ``Gamma`` couples each agent to the
    population average.

    Positive (semi)definiteness is not enforced here; ``validate`` reports it.

    """
    Q: np.ndarray
    R: np.ndarray
    Gamma: np.ndarray

    def __post_init__(self):
        Q = as_matrix(self.Q, name='Q')
        n = Q.shape[0]
        if Q.shape != (n, n):
            raise DimensionMismatch("Q must be square")
        R = as_matrix(self.R, name='R')
        if R.shape[0] != R.shape[1]:
            raise DimensionMismatch("R must be square")
        Gamma = as_matrix(self.Gamma, shape=(n, n), name='Gamma')
        for name, value in (('Q', Q), ('R', R), ('Gamma', Gamma)):
            object.__setattr__(self, name, _freeze(value))

    @property
    def n(self):
        return self.Q.shape[0]

    @property
    def m(self):
        return self.R.shape[0]

    def to_document(self):
        return {'Q': self.Q.tolist(), 'R': self.R.tolist(),
                'Gamma': self.Gamma.tolist()}


@dataclass(frozen=True, eq=False)
class DerivedWeights(object):
    QGamma: np.ndarray


@dataclass
class ValidationReport(object):
    q_psd: bool
    r_pd: bool
    ms_stabilizer_ok: bool = None
    notes: list = field(default_factory=list)

    @property
    def ok(self):
        return self.q_psd and self.r_pd and self.ms_stabilizer_ok is not False

    def to_document(self):
        return {'q_psd': self.q_psd, 'r_pd': self.r_pd,
                'ms_stabilizer_ok': self.ms_stabilizer_ok,
                'notes': list(self.notes), 'ok': self.ok}


def gamma_weight(cost):
    """Return the mean-field weight ``Gamma'Q + Q Gamma - Gamma'Q Gamma``.

    >>> import numpy as np
    >>> w = gamma_weight(CostSpec(np.diag([3.0, 2.0]), [[1.25]],
    ...                           0.9 * np.eye(2)))
    >>> np.round(np.diag(w.QGamma), 12).tolist()
    [2.97, 1.98]

    """
    Q, G = cost.Q, cost.Gamma
    QGamma = symmetrize(G.T @ Q + Q @ G - G.T @ Q @ G)
    return DerivedWeights(QGamma=_freeze(QGamma))


def upsilon(P, dyn, cost):
    """Return ``R + D'PD``."""
    P = as_matrix(P, shape=(dyn.n, dyn.n), name='P')
    return symmetrize(cost.R + dyn.D.T @ P @ dyn.D)


def check_dimensions(dyn, cost):
    if cost.n != dyn.n or cost.m != dyn.m:
        raise DimensionMismatch(
            "cost weights are sized for n=%d, m=%d but the dynamics have "
            "n=%d, m=%d" % (cost.n, cost.m, dyn.n, dyn.m))


def validate(dyn, cost, k0=None):
    """Check the standing assumptions that can be checked cheaply.

    Q >= 0 and R > 0 are hard checks; if a candidate gain `k0` is supplied it
    must be a mean-square stabiliser. The observability parts of the
    assumptions only produce notes.

    """
    # Import here; the oracle depends on this module.
    from mfsocial import oracle

    check_dimensions(dyn, cost)
    report = ValidationReport(q_psd=is_psd(cost.Q, EPS_PSD),
                              r_pd=is_pd(cost.R, EPS_PSD))
    if not report.q_psd:
        report.notes.append("Q is not symmetric positive semidefinite")
    if not report.r_pd:
        report.notes.append("R is not symmetric positive definite")

    if k0 is not None:
        k0 = as_matrix(k0, shape=(dyn.m, dyn.n), name='K0')
        report.ms_stabilizer_ok = oracle.is_ms_stabilizer(k0, dyn)
        if not report.ms_stabilizer_ok:
            report.notes.append("K0 is not a mean-square stabilizer")

    if report.q_psd:
        Qroot = psd_sqrt(cost.Q)
        if not oracle.exact_observability_diagnostic(dyn, Qroot):
            report.notes.append("[A, C; sqrt(Q)] may not be exactly "
                                "observable (heuristic)")
        F = Qroot @ (np.eye(dyn.n) - cost.Gamma)
        if not oracle.is_observable(dyn.A, F):
            report.notes.append("(A, sqrt(Q)(I - Gamma)) is not observable")
    return report
