"""The mean-field state, by two routes.

Monte Carlo averages sample paths of one agent driven by
``u = -(K + Ks) x`` from ``xbar0``. Identification recovers B from the
learned feedforward solution, then A row by row from the feedforward
dataset, and propagates ``xbar(t) = expm((A - B(K + Ks)) t) xbar0``.

"""
import logging
from dataclasses import dataclass
from dataclasses import field

import numpy as np
import scipy.linalg

from mfsocial.exceptions import NumericalError
from mfsocial.exceptions import ValidationError
from mfsocial.linalg import as_matrix
from mfsocial.linalg import numerical_rank
from mfsocial.linalg import solve_least_squares
from mfsocial.oracle import is_ms_stabilizer
from mfsocial.simulation import AffinePolicy
from mfsocial.simulation import simulate_ensemble

logger = logging.getLogger(__name__)

S_MAX_COND = 1e10
METHODS = ('monte-carlo', 'identified', 'exact')


class IdentificationUnavailable(NumericalError):
    pass


@dataclass(frozen=True, eq=False)
class MeanFieldPath(object):
    times: np.ndarray
    xbar: np.ndarray
    xbar0: np.ndarray
    method: str

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError("unknown mean-field method %r" % self.method)
        if self.xbar.shape[0] != self.times.shape[0]:
            raise ValidationError("xbar and times have different lengths")
        if not np.all(np.isfinite(self.xbar)):
            raise NumericalError("mean-field path has non-finite entries")

    @property
    def n(self):
        return self.xbar.shape[1]

    def at(self, times):
        """Linear interpolation of the path at `times`."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        return np.column_stack([np.interp(times, self.times, self.xbar[:, i])
                                for i in range(self.n)])

    def feedforward(self, Ks):
        """Feedforward signal ``t -> Ks xbar(t)`` for ``AffinePolicy``."""
        Ks = np.atleast_2d(np.asarray(Ks, dtype=float))
        return lambda times: self.at(times) @ Ks.T

    def sup_distance(self, other):
        if self.xbar.shape != other.xbar.shape:
            other_xbar = other.at(self.times)
        else:
            other_xbar = other.xbar
        return float(np.max(np.abs(self.xbar - other_xbar)))


@dataclass(frozen=True, eq=False)
class IdentifiedModel(object):
    Ahat: np.ndarray
    Bhat: np.ndarray
    residuals: list = field(default_factory=list)

    def closed_loop(self, Khat, Kshat):
        return self.Ahat - self.Bhat @ (np.asarray(Khat) + np.asarray(Kshat))

    def to_document(self):
        return {'Ahat': self.Ahat.tolist(), 'Bhat': self.Bhat.tolist(),
                'residuals': [float(r) for r in self.residuals]}


def matrix_exponential(M):
    """Matrix exponential by scaling and squaring.

    >>> import numpy as np
    >>> matrix_exponential(np.zeros((2, 2))).tolist()
    [[1.0, 0.0], [0.0, 1.0]]

    """
    return scipy.linalg.expm(as_matrix(M, name='M'))


def mf_monte_carlo(dyn, Khat, Kshat, xbar0, Ns, plan, seed, workers=1):
    """Average of `Ns` sample paths under ``u = -(Khat + Kshat) x`` started
    at `xbar0`. ``Ns = 1`` returns a single noisy path.

    """
    gain = as_matrix(Khat, shape=(dyn.m, dyn.n), name='Khat') + \
        as_matrix(Kshat, shape=(dyn.m, dyn.n), name='Kshat')
    if not is_ms_stabilizer(gain, dyn):
        logger.warning("K + Ks is not a mean-square stabilizer; the Monte "
                       "Carlo mean field may diverge")
    xbar0 = np.asarray(xbar0, dtype=float).reshape(dyn.n)
    ens = simulate_ensemble(dyn, AffinePolicy(K=gain), xbar0, plan, Ns,
                            base_seed=seed, keep_paths=0, workers=workers)
    xbar = ens.mean_state.copy()
    xbar[0] = xbar0
    return MeanFieldPath(times=ens.times, xbar=xbar,
                         xbar0=xbar0.copy(), method='monte-carlo')


def identify_B(S, Ks, Upsilon):
    """``(Upsilon Ks S^-1)'``; needs a well-conditioned S."""
    S = as_matrix(S, name='S')
    n = S.shape[0]
    Upsilon = as_matrix(Upsilon, name='Upsilon')
    Ks = as_matrix(Ks, shape=(Upsilon.shape[0], n), name='Ks')
    if not np.linalg.cond(S) <= S_MAX_COND:
        raise IdentificationUnavailable("S is near-singular: identification "
                                        "route unavailable; use the Monte "
                                        "Carlo route")
    # Ks S^-1 = (S^-1 Ks')' with S symmetric.
    return np.linalg.solve(S, (Upsilon @ Ks).T)


def identify_A(ds, Bhat):
    """Identify A row by row from the feedforward dataset.

    Row j solves ``Z_j a_j = H_j`` with ``Z_j = 2 I_xbarxbar (e_j' (x) I)``
    and ``H_j = delta(xbar_j^2) - 2 I_xbarubar vec(B' E_j)``.

    """
    n, m = ds.n, ds.m
    Bhat = as_matrix(Bhat, shape=(n, m), name='Bhat')
    rows, cols = np.triu_indices(n)
    square_column = {i: k for k, (i, j) in enumerate(zip(rows, cols))
                     if i == j}
    Ahat = np.zeros((n, n))
    residuals = []
    for j in range(n):
        Z = 2 * ds.Ixbarxbar[:, j * n:(j + 1) * n]
        if numerical_rank(Z) < n:
            raise IdentificationUnavailable("rank condition fails for row %d "
                                            "of A" % (j + 1))
        H = ds.delta_xbarhat[:, square_column[j]] - \
            2 * ds.Ixbarubar[:, j * m:(j + 1) * m] @ Bhat[j]
        Ahat[j], residual = solve_least_squares(Z, H)
        residuals.append(residual)
    return IdentifiedModel(Ahat=Ahat, Bhat=Bhat, residuals=residuals)


def mf_from_identified(model, Khat, Kshat, xbar0, grid, method='identified'):
    """``expm((Ahat - Bhat(Khat + Kshat)) t) xbar0`` on the grid.

    `method` labels the path; pass ``'exact'`` when `model` holds the true
    matrices.

    """
    grid = np.asarray(grid, dtype=float)
    xbar0 = np.asarray(xbar0, dtype=float).ravel()
    M = model.closed_loop(Khat, Kshat)
    propagators = scipy.linalg.expm(grid[:, None, None] * M[None, :, :])
    xbar = propagators @ xbar0
    return MeanFieldPath(times=grid, xbar=xbar, xbar0=xbar0.copy(),
                         method=method)
