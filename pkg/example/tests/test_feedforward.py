import numpy as np
import pytest

from mfsocial.exceptions import ValidationError
from mfsocial.feedback import RankConditionViolated
from mfsocial.feedback import build_feedback_dataset
from mfsocial.feedforward import FeedforwardDataset
from mfsocial.feedforward import build_feedforward_dataset
from mfsocial.feedforward import check_rank_feedforward
from mfsocial.feedforward import feedforward_rank_required
from mfsocial.feedforward import irl_feedforward_iterate
from mfsocial.models import gamma_weight
from mfsocial.oracle import pi_feedback
from mfsocial.oracle import pi_feedforward
from mfsocial.simulation import AffinePolicy
from mfsocial.simulation import NoiseSpec
from mfsocial.simulation import SamplingPlan
from mfsocial.simulation import simulate_ensemble

SHORT = dict(t1=0.0, Ts=0.01, T=0.1, l=20, dt=0.01, horizon=1.0)


def test_zero_mean_path_gives_zero_blocks(bench_dyn):
    plan = SamplingPlan(**SHORT)
    ens = simulate_ensemble(bench_dyn, AffinePolicy(np.array([[6.0, -3.0]])),
                            [0.0, 0.0], plan, 1, 0)
    ds = build_feedforward_dataset(ens, plan)
    for block in ds.blocks().values():
        assert np.all(block == 0)
    assert not check_rank_feedforward(ds)
    with pytest.raises(RankConditionViolated):
        irl_feedforward_iterate(ds, [[6.0, -3.0]], [[1.25]], np.eye(2))


def test_deterministic_path_blocks_match_feedback_blocks(noise_free):
    dyn = noise_free.get_dynamics()
    plan = SamplingPlan(**SHORT)
    policy = AffinePolicy(np.array([[6.0, -3.0]]),
                          exploration=NoiseSpec(J=4, freq_lo=-5.0,
                                                freq_hi=5.0, channels=1))
    ens = simulate_ensemble(dyn, policy, [2.0, 2.0], plan, 1, 0)
    ff = build_feedforward_dataset(ens, plan)
    fb = build_feedback_dataset(ens, plan)
    np.testing.assert_allclose(ff.delta_xbarhat, fb.delta_xhat, atol=1e-12)
    np.testing.assert_allclose(ff.Ixbarxbar, fb.Ixx, atol=1e-12)
    np.testing.assert_allclose(ff.Ixbarubar, fb.Ixu, atol=1e-12)
    assert check_rank_feedforward(ff)


def test_rank_requirement():
    assert feedforward_rank_required(2, 1) == 5
    assert feedforward_rank_required(3, 2) == 12


def test_dataset_rows_must_agree():
    with pytest.raises(ValidationError):
        FeedforwardDataset(np.zeros((3, 3)), np.zeros((2, 4)),
                           np.zeros((3, 2)), plan=None)


def test_upsilon_must_be_positive_definite(noise_free_report):
    ds = noise_free_report.feedforward_dataset
    with pytest.raises(ValidationError):
        irl_feedforward_iterate(ds, [[6.0, -3.0]], [[-1.0]], np.eye(2))


def test_no_coupling_needs_one_iteration(noise_free_report):
    ds = noise_free_report.feedforward_dataset
    fb = noise_free_report.learned_feedback
    ff, trace = irl_feedforward_iterate(ds, fb.K, [[1.25]],
                                        np.zeros((2, 2)))
    assert len(trace) == 1
    np.testing.assert_allclose(ff.S, 0.0, atol=1e-8)
    np.testing.assert_allclose(ff.Ks, 0.0, atol=1e-8)
    assert ff.Pi is None


def test_exact_data_reproduce_the_model_based_iteration(noise_free,
                                                        noise_free_report):
    dyn = noise_free.get_dynamics()
    cost = noise_free.get_cost()
    oracle_fb, _ = pi_feedback(dyn, cost, noise_free.get_k0(), xi=1e-9)
    oracle, oracle_trace = pi_feedforward(dyn, cost, oracle_fb, xi=1e-9)
    learned, trace = irl_feedforward_iterate(
        noise_free_report.feedforward_dataset, oracle_fb.K,
        oracle_fb.upsilon(cost.R), gamma_weight(cost).QGamma, xi=1e-9,
        P=oracle_fb.P)
    for mine, theirs in zip(trace.series('Ks'), oracle_trace.series('Ks')):
        np.testing.assert_allclose(mine, theirs, atol=1e-6)
    np.testing.assert_allclose(learned.Ks, oracle.Ks, atol=1e-6)
    np.testing.assert_allclose(learned.S, oracle.S, atol=1e-6)
    np.testing.assert_allclose(learned.Pi, oracle_fb.P + learned.S)

    values = trace.series('S')
    for current, following in zip(values, values[1:]):
        assert np.linalg.eigvalsh(current - following)[0] >= -1e-6
