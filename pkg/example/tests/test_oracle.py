import numpy as np
import pytest
import scipy.linalg

from mfsocial.models import CostSpec
from mfsocial.models import SystemDynamics
from mfsocial.oracle import FeedbackSolution
from mfsocial.oracle import NoConvergence
from mfsocial.oracle import NotAStabilizer
from mfsocial.oracle import NonStabilizingClosedLoop
from mfsocial.oracle import exact_observability_diagnostic
from mfsocial.oracle import gain_from_value
from mfsocial.oracle import indefinite_are_residual
from mfsocial.oracle import is_hurwitz
from mfsocial.oracle import is_ms_stabilizer
from mfsocial.oracle import is_observable
from mfsocial.oracle import pi_feedback
from mfsocial.oracle import pi_feedforward
from mfsocial.oracle import sare_residual
from mfsocial.oracle import second_are_residual
from mfsocial.oracle import solve_generalized_lyapunov

from example.tests.conftest import TABLE_K
from example.tests.conftest import TABLE_KS
from example.tests.conftest import TABLE_LAMBDA
from example.tests.conftest import TABLE_P
from example.tests.conftest import TABLE_S
from example.tests.conftest import random_problem

K0 = [[6.0, -3.0]]


def test_benchmark_feedforward_at_the_learned_feedback_pair(bench_dyn,
                                                            bench_cost):
    learned = FeedbackSolution.from_gains(TABLE_K, [[TABLE_LAMBDA]],
                                          bench_cost.R)
    ff, _ = pi_feedforward(bench_dyn, bench_cost, learned)
    np.testing.assert_allclose(ff.S, TABLE_S, atol=5e-4)
    np.testing.assert_allclose(ff.Ks, TABLE_KS, atol=5e-4)
    assert np.array_equal(ff.S, ff.S.T)
    assert ff.Pi is None


def test_benchmark_feedforward_at_the_exact_feedback_pair(bench_dyn,
                                                          bench_cost):
    fb, _ = pi_feedback(bench_dyn, bench_cost, K0)
    ff, _ = pi_feedforward(bench_dyn, bench_cost, fb)
    np.testing.assert_allclose(ff.S, [[-3.6114, 3.6803], [3.6803, -9.8205]],
                               atol=1e-3)
    np.testing.assert_allclose(ff.Ks, [[-0.48728, 0.49657]], atol=1e-4)


def test_benchmark_value_matches_reported_estimate(bench_dyn, bench_cost):
    fb, _ = pi_feedback(bench_dyn, bench_cost, K0)
    gap = np.linalg.norm(fb.P - TABLE_P, 2) / np.linalg.norm(TABLE_P, 2)
    assert gap <= 0.03
    np.testing.assert_allclose(fb.K, [[8.38542, -4.76424]], atol=1e-4)
    np.testing.assert_allclose(fb.Lambda, [[0.23229]], atol=1e-4)
    residual = np.linalg.norm(sare_residual(TABLE_P, bench_dyn, bench_cost), 2)
    assert abs(residual - 0.7299) <= 0.07299


def test_benchmark_solutions_solve_their_equations(bench_dyn, bench_cost):
    fb, _ = pi_feedback(bench_dyn, bench_cost, K0)
    ff, _ = pi_feedforward(bench_dyn, bench_cost, fb)
    assert np.linalg.norm(sare_residual(fb.P, bench_dyn, bench_cost)) < 1e-6
    np.testing.assert_allclose(fb.K, gain_from_value(fb.P, bench_dyn,
                                                     bench_cost), atol=1e-8)
    assert np.linalg.norm(indefinite_are_residual(ff.S, fb, bench_dyn,
                                                  bench_cost)) < 1e-6
    np.testing.assert_allclose(ff.Pi, fb.P + ff.S)
    assert np.linalg.norm(second_are_residual(ff.Pi, fb.P, bench_dyn,
                                              bench_cost)) < 1e-6
    assert np.linalg.eigvalsh(fb.P)[0] > 0


def test_stabilizer_checks(bench_dyn):
    assert is_ms_stabilizer(np.array(K0), bench_dyn)
    assert not is_ms_stabilizer(np.zeros((1, 2)), bench_dyn)
    assert is_hurwitz(-np.eye(2))
    assert not is_hurwitz(np.diag([-1.0, 0.0]))


def test_feedback_needs_a_stabilizer(bench_dyn, bench_cost):
    with pytest.raises(NotAStabilizer):
        pi_feedback(bench_dyn, bench_cost, [[0.0, 0.0]])


def test_no_convergence_carries_the_trace(bench_dyn, bench_cost):
    with pytest.raises(NoConvergence) as excinfo:
        pi_feedback(bench_dyn, bench_cost, K0, max_iter=1)
    assert len(excinfo.value.trace) == 1


def test_trace_rows(bench_dyn, bench_cost):
    _, trace = pi_feedback(bench_dyn, bench_cost, K0)
    rows = trace.to_rows()
    assert [row['k'] for row in rows] == list(range(1, len(trace) + 1))
    assert set(rows[0]) == {'loop', 'k', 'update_norm', 'residual_norm',
                            'g11', 'g12'}
    assert rows[-1]['g11'] == trace.final.snapshot['K'][0, 0]


def test_lyapunov_doubles_as_the_classical_one():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((3, 3)) - 4 * np.eye(3)
    W = np.eye(3)
    X = solve_generalized_lyapunov(A, np.zeros((3, 3)), W)
    expected = scipy.linalg.solve_continuous_lyapunov(A.T, -W)
    np.testing.assert_allclose(X, expected, atol=1e-10)


@pytest.mark.parametrize('seed', range(20))
def test_lyapunov_residual(seed):
    dyn, cost, K0 = random_problem(seed)
    X = solve_generalized_lyapunov(dyn.A, dyn.C, cost.Q)
    residual = dyn.A.T @ X + X @ dyn.A + dyn.C.T @ X @ dyn.C + cost.Q
    assert np.linalg.norm(residual) <= 1e-10 * max(1.0, np.linalg.norm(X))
    assert np.array_equal(X, X.T)


def test_lyapunov_singular_operator():
    with pytest.raises(NonStabilizingClosedLoop):
        solve_generalized_lyapunov(np.zeros((2, 2)), np.zeros((2, 2)),
                                   np.eye(2))


@pytest.mark.parametrize('seed', range(20))
def test_feedback_iteration_is_monotone(seed):
    dyn, cost, K0 = random_problem(seed)
    solution, trace = pi_feedback(dyn, cost, K0)
    values = trace.series('P')
    tol = 1e-9 * max(1.0, np.linalg.norm(values[0]))
    for current, following in zip(values, values[1:]):
        assert np.linalg.eigvalsh(current - following)[0] >= -tol
    for current in values:
        assert np.linalg.eigvalsh(current - solution.P)[0] >= -tol


@pytest.mark.parametrize('seed', range(20))
def test_feedforward_iteration_is_monotone_and_stable(seed):
    dyn, cost, K0 = random_problem(seed)
    fb, _ = pi_feedback(dyn, cost, K0)
    ff, trace = pi_feedforward(dyn, cost, fb)
    for Atilde in trace.series('Atilde'):
        assert is_hurwitz(Atilde)
    values = trace.series('S')
    for current, following in zip(values, values[1:]):
        assert np.linalg.eigvalsh(current - following)[0] >= -1e-6
    assert np.linalg.norm(indefinite_are_residual(ff.S, fb, dyn, cost)) < 1e-7


def test_feedforward_without_coupling(bench_dyn, bench_cost):
    uncoupled = CostSpec(bench_cost.Q, bench_cost.R, np.zeros((2, 2)))
    fb, _ = pi_feedback(bench_dyn, uncoupled, K0)
    ff, trace = pi_feedforward(bench_dyn, uncoupled, fb)
    assert len(trace) == 1
    assert np.all(ff.S == 0) and np.all(ff.Ks == 0)


def test_observability():
    A = np.diag([1.0, 2.0])
    assert not is_observable(A, [[1.0, 0.0]])
    assert is_observable(A, [[1.0, 1.0]])
    rotation = np.array([[0.0, 1.0], [-1.0, 0.0]])
    assert is_observable(rotation, [[1.0, 0.0]])


def test_ms_stabilizer_trivial_cases():
    zero_input = dict(B=np.zeros((2, 1)), C=np.zeros((2, 2)),
                      D=np.zeros((2, 1)))
    no_gain = np.zeros((1, 2))
    assert is_ms_stabilizer(no_gain, SystemDynamics(A=-np.eye(2),
                                                    **zero_input))
    assert not is_ms_stabilizer(no_gain, SystemDynamics(A=np.eye(2),
                                                        **zero_input))


@pytest.mark.parametrize('seed', range(20))
def test_feedback_iterates_stay_ms_stabilizing(seed):
    dyn, cost, K0 = random_problem(seed)
    _, trace = pi_feedback(dyn, cost, K0)
    for K in trace.series('K'):
        assert is_ms_stabilizer(K, dyn)


@pytest.mark.parametrize('seed', range(20))
def test_feedback_started_at_its_solution_stays_there(seed):
    dyn, cost, K0 = random_problem(seed)
    solution, _ = pi_feedback(dyn, cost, K0)
    again, trace = pi_feedback(dyn, cost, solution.K)
    assert len(trace) <= 3
    tol = 1e-6 * max(1.0, np.linalg.norm(solution.P))
    np.testing.assert_allclose(again.P, solution.P, atol=tol)


def test_exact_observability_without_diffusion():
    A = np.array([[0.0, 1.0], [-2.0, -3.0]])
    dyn = SystemDynamics(A=A, B=np.zeros((2, 1)), C=np.zeros((2, 2)),
                         D=np.zeros((2, 1)))
    Qroot = np.array([[1.0, 0.0], [0.0, 0.0]])
    assert is_observable(A, Qroot[:1])
    assert exact_observability_diagnostic(dyn, Qroot)


def test_exact_observability_needs_a_state_weight(bench_dyn):
    assert not exact_observability_diagnostic(bench_dyn, np.zeros((2, 2)))


def test_benchmark_is_exactly_observable(bench_dyn, bench_cost):
    Qroot = scipy.linalg.sqrtm(bench_cost.Q).real
    assert exact_observability_diagnostic(bench_dyn, Qroot)
