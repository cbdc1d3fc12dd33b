import numpy as np
import pytest

from mfsocial.exceptions import DimensionMismatch
from mfsocial.models import CostSpec
from mfsocial.models import SystemDynamics
from mfsocial.models import gamma_weight
from mfsocial.models import upsilon
from mfsocial.models import validate


def test_gamma_weight_limits(bench_cost):
    Q = bench_cost.Q
    zero = CostSpec(Q, bench_cost.R, np.zeros((2, 2)))
    identity = CostSpec(Q, bench_cost.R, np.eye(2))
    assert np.all(gamma_weight(zero).QGamma == 0)
    np.testing.assert_allclose(gamma_weight(identity).QGamma, Q)


def test_gamma_weight_benchmark(bench_cost):
    QGamma = gamma_weight(bench_cost).QGamma
    np.testing.assert_allclose(QGamma, np.diag([2.97, 1.98]), atol=1e-12)
    assert np.array_equal(QGamma, QGamma.T)
    assert np.array_equal(QGamma, gamma_weight(bench_cost).QGamma)


def test_gamma_weight_is_symmetric_for_nonsymmetric_coupling():
    rng = np.random.default_rng(3)
    F = rng.standard_normal((3, 3))
    cost = CostSpec(F @ F.T, [[1.0]], rng.standard_normal((3, 3)))
    QGamma = gamma_weight(cost).QGamma
    assert np.array_equal(QGamma, QGamma.T)


def test_upsilon_reduces_to_r(bench_dyn, bench_cost):
    assert np.allclose(upsilon(np.zeros((2, 2)), bench_dyn, bench_cost),
                       bench_cost.R)
    no_input_noise = SystemDynamics(bench_dyn.A, bench_dyn.B, bench_dyn.C,
                                    np.zeros((2, 1)))
    P = np.array([[2.0, 1.0], [1.0, 3.0]])
    assert np.allclose(upsilon(P, no_input_noise, bench_cost), bench_cost.R)


@pytest.mark.parametrize('seed', range(20))
def test_upsilon_bounded_below_by_r(seed):
    rng = np.random.default_rng(seed)
    F = rng.standard_normal((3, 3))
    G = rng.standard_normal((2, 2))
    R = G @ G.T + np.eye(2)
    dyn = SystemDynamics(-np.eye(3), rng.standard_normal((3, 2)),
                         np.zeros((3, 3)), rng.standard_normal((3, 2)))
    cost = CostSpec(np.eye(3), R, np.zeros((3, 3)))
    Ups = upsilon(F @ F.T, dyn, cost)
    assert np.linalg.eigvalsh(Ups)[0] >= np.linalg.eigvalsh(R)[0] - 1e-12


def test_row_input_matrix_is_a_column():
    dyn = SystemDynamics([[0.0, 1.0], [0.0, 0.0]], [0.0, 1.0],
                         np.zeros((2, 2)), [0.0, 0.0])
    assert dyn.B.shape == (2, 1)
    assert dyn.D.shape == (2, 1)
    assert (dyn.n, dyn.m) == (2, 1)


def test_dynamics_are_read_only(bench_dyn):
    with pytest.raises(ValueError):
        bench_dyn.A[0, 0] = 1.0


@pytest.mark.parametrize('kwargs', [
    {'A': np.ones((2, 3))},
    {'C': np.ones((3, 3))},
    {'A': [[np.nan, 0.0], [0.0, 1.0]]},
])
def test_malformed_dynamics(bench_dyn, kwargs):
    matrices = dict(A=bench_dyn.A, B=bench_dyn.B, C=bench_dyn.C,
                    D=bench_dyn.D)
    matrices.update(kwargs)
    with pytest.raises(DimensionMismatch):
        SystemDynamics(**matrices)


def test_validate_benchmark(bench_dyn, bench_cost):
    report = validate(bench_dyn, bench_cost, [[6.0, -3.0]])
    assert report.q_psd and report.r_pd
    assert report.ms_stabilizer_ok is True
    assert report.ok
    assert not any("not observable" in note for note in report.notes)


def test_validate_flags_bad_weights(bench_dyn):
    zero_r = CostSpec(np.eye(2), [[0.0]], np.zeros((2, 2)))
    report = validate(bench_dyn, zero_r)
    assert report.r_pd is False
    assert not report.ok

    indefinite_q = CostSpec(np.diag([1.0, -1.0]), [[1.0]], np.zeros((2, 2)))
    report = validate(bench_dyn, indefinite_q)
    assert report.q_psd is False


def test_validate_rejects_non_stabilizer(bench_dyn, bench_cost):
    report = validate(bench_dyn, bench_cost, [[0.0, 0.0]])
    assert report.ms_stabilizer_ok is False
    assert not report.ok


def test_validate_dimension_mismatch(bench_dyn):
    cost = CostSpec(np.eye(3), [[1.0]], np.zeros((3, 3)))
    with pytest.raises(DimensionMismatch):
        validate(bench_dyn, cost)
