"""Tests for displacement metrics, likelihood ranking and top-k prediction."""
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from trajflow.data import Trajectory, rotation_normalize, window_trajectories
from trajflow.errors import InvalidInputError
from trajflow.metrics import (
    PredictionSet,
    likelihood_rank_curve,
    min_ade,
    min_fde,
    oracle_top_fraction,
    predict,
    rank_by_likelihood,
    top_k_predict,
)

from test_flows import make_model


def make_ps(samples, lls=None, gt=None) -> PredictionSet:
    samples = np.asarray(samples, dtype=np.float64)
    if lls is None:
        lls = np.zeros(len(samples))
    if gt is None:
        gt = samples[0]
    return PredictionSet(samples, lls, gt)


def straight(offset=0.0, length=4):
    track = np.stack([np.arange(1, length + 1), np.zeros(length)], axis=1)
    return track + np.array([offset, 0.0])


class TestMinAdeFde:
    def test_exact_match_gives_zero(self):
        ps = make_ps([straight(), straight(2.0)], gt=straight())
        assert min_ade(ps) == 0.0
        assert min_fde(ps) == 0.0

    def test_uniform_offsets(self):
        ps = make_ps([straight(1.0), straight(2.0)], gt=straight())
        assert min_ade(ps) == pytest.approx(1.0)
        assert min_fde(ps) == pytest.approx(1.0)

    def test_single_sample_is_its_own_error(self):
        ps = make_ps([straight(3.0)], gt=straight())
        assert min_fde(ps) == pytest.approx(3.0)

    def test_matches_brute_force(self, rng):
        samples = rng.normal(size=(20, 6, 2))
        gt = rng.normal(size=(6, 2))
        ps = make_ps(samples, gt=gt)
        ades = [np.linalg.norm(s - gt, axis=1).mean() for s in samples]
        fdes = [np.linalg.norm(s[-1] - gt[-1]) for s in samples]
        assert min_ade(ps) == pytest.approx(min(ades))
        assert min_fde(ps) == pytest.approx(min(fdes))

    def test_partial_ground_truth(self, rng):
        samples = rng.normal(size=(5, 8, 2))
        gt = rng.normal(size=(3, 2))
        ps = make_ps(samples, gt=gt)
        ades = [np.linalg.norm(s[:3] - gt, axis=1).mean() for s in samples]
        assert min_ade(ps) == pytest.approx(min(ades))
        fdes = [np.linalg.norm(s[2] - gt[2]) for s in samples]
        assert min_fde(ps) == pytest.approx(min(fdes))

    def test_min_not_above_mean(self, rng):
        samples = rng.normal(size=(15, 5, 2))
        gt = rng.normal(size=(5, 2))
        ps = make_ps(samples, gt=gt)
        per_sample = np.linalg.norm(samples - gt[None], axis=2).mean(axis=1)
        assert min_ade(ps) <= per_sample.mean()

    def test_rigid_rotation_invariance(self, rng):
        samples = rng.normal(size=(10, 5, 2))
        gt = rng.normal(size=(5, 2))
        angle = 1.1
        rot = np.array(
            [[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]]
        )
        ps = make_ps(samples, gt=gt)
        ps_rot = make_ps(samples @ rot.T, gt=gt @ rot.T)
        assert min_ade(ps_rot) == pytest.approx(min_ade(ps), abs=1e-9)
        assert min_fde(ps_rot) == pytest.approx(min_fde(ps), abs=1e-9)


class TestOracle:
    def test_fraction_point_one_of_ten_is_best(self, rng):
        samples = rng.normal(size=(10, 4, 2))
        gt = rng.normal(size=(4, 2))
        ps = make_ps(samples, gt=gt)
        best = np.linalg.norm(samples[:, 2] - gt[2], axis=1).min()
        assert oracle_top_fraction(ps, 0.1, 2) == pytest.approx(best)

    def test_fraction_one_is_mean(self, rng):
        samples = rng.normal(size=(10, 4, 2))
        gt = rng.normal(size=(4, 2))
        ps = make_ps(samples, gt=gt)
        mean = np.linalg.norm(samples[:, 1] - gt[1], axis=1).mean()
        assert oracle_top_fraction(ps, 1.0, 1) == pytest.approx(mean)

    def test_matches_sort_oracle_at_many_steps(self, rng):
        samples = rng.normal(size=(50, 8, 2))
        gt = rng.normal(size=(8, 2))
        ps = make_ps(samples, gt=gt)
        for step in (1, 3, 5, 7):
            err = np.sort(np.linalg.norm(samples[:, step] - gt[step], axis=1))
            assert oracle_top_fraction(ps, 0.1, step) == pytest.approx(err[:5].mean())

    def test_monotone_in_fraction(self, rng):
        samples = rng.normal(size=(30, 4, 2))
        gt = rng.normal(size=(4, 2))
        ps = make_ps(samples, gt=gt)
        values = [oracle_top_fraction(ps, f, 3) for f in (0.1, 0.3, 0.6, 1.0)]
        assert values == sorted(values)

    def test_whole_track_selection_differs(self, rng):
        samples = rng.normal(size=(40, 6, 2))
        gt = rng.normal(size=(6, 2))
        ps = make_ps(samples, gt=gt)
        per_step = oracle_top_fraction(ps, 0.1, 5, selection="per-step")
        whole = oracle_top_fraction(ps, 0.1, 5, selection="whole-track")
        assert per_step <= whole + 1e-12

    def test_step_outside_ground_truth_rejected(self, rng):
        ps = make_ps(rng.normal(size=(5, 6, 2)), gt=rng.normal(size=(3, 2)))
        with pytest.raises(InvalidInputError):
            oracle_top_fraction(ps, 0.1, 4)


class TestRanking:
    def test_stable_on_ties(self):
        ps = make_ps(np.zeros((4, 2, 2)), lls=np.array([1.0, 1.0, 1.0, 1.0]))
        np.testing.assert_array_equal(rank_by_likelihood(ps), [0, 1, 2, 3])

    def test_decreasing_input_is_identity(self):
        ps = make_ps(np.zeros((4, 2, 2)), lls=np.array([5.0, 4.0, 1.0, 0.0]))
        np.testing.assert_array_equal(rank_by_likelihood(ps), [0, 1, 2, 3])

    @given(lls=arrays(np.float64, 12, elements=st.floats(-50, 50)))
    @settings(max_examples=30, deadline=None)
    def test_agrees_with_sort(self, lls):
        ps = make_ps(np.zeros((12, 2, 2)), lls=lls)
        order = rank_by_likelihood(ps)
        assert list(ps.log_likelihoods[order]) == sorted(lls, reverse=True)


def eval_window(seed=0):
    rng = np.random.default_rng(seed)
    positions = rng.normal(size=(10, 2)).cumsum(axis=0)
    traj = Trajectory("w", np.arange(10), positions)
    return rotation_normalize(window_trajectories([traj], 5, 2, min_future=2)[0])


class TestTopKPredict:
    def test_k_equals_candidates_is_plain_sampling(self, torch_gen):
        model = make_model()
        window = eval_window()
        ps = top_k_predict(model, window, 12, 12, torch_gen)
        torch_gen.manual_seed(12345)
        plain = predict(model, window, 12, torch_gen)
        order = rank_by_likelihood(plain)
        np.testing.assert_allclose(ps.samples, plain.samples[order])

    def test_k_one_is_argmax(self, torch_gen):
        model = make_model()
        window = eval_window()
        ps = top_k_predict(model, window, 20, 1, torch_gen)
        torch_gen.manual_seed(12345)
        plain = predict(model, window, 20, torch_gen)
        assert ps.log_likelihoods[0] == plain.log_likelihoods.max()

    def test_kept_set_matches_sort_oracle(self, torch_gen):
        model = make_model()
        window = eval_window()
        ps = top_k_predict(model, window, 30, 7, torch_gen)
        torch_gen.manual_seed(12345)
        plain = predict(model, window, 30, torch_gen)
        expected = np.sort(plain.log_likelihoods)[::-1][:7]
        np.testing.assert_allclose(np.sort(ps.log_likelihoods), np.sort(expected))

    def test_k_larger_than_candidates_rejected(self, torch_gen):
        with pytest.raises(InvalidInputError):
            top_k_predict(make_model(), eval_window(), 5, 6, torch_gen)

    def test_prediction_shapes_and_gt(self, torch_gen):
        model = make_model()
        window = eval_window()
        ps = predict(model, window, 9, torch_gen)
        assert ps.samples.shape == (9, 2, 2)
        np.testing.assert_array_equal(ps.ground_truth, window.future_abs)


class TestRankCurve:
    def test_identical_samples_give_flat_curve(self):
        track = straight()
        sets = [
            make_ps([track, track, track], lls=np.array([3.0, 2.0, 1.0]),
                    gt=straight(1.0))
            for _ in range(4)
        ]
        curve = likelihood_rank_curve(sets)
        assert curve.shape == (3, 2)
        np.testing.assert_allclose(curve[:, 0], curve[0, 0])

    def test_single_window_curve(self, rng):
        samples = rng.normal(size=(5, 4, 2))
        gt = rng.normal(size=(4, 2))
        lls = rng.normal(size=5)
        ps = make_ps(samples, lls=lls, gt=gt)
        curve = likelihood_rank_curve([ps])
        order = np.argsort(-lls, kind="stable")
        expected_ade = np.linalg.norm(samples[order] - gt[None], axis=2).mean(axis=1)
        np.testing.assert_allclose(curve[:, 0], expected_ade)

    def test_matches_brute_force_across_windows(self, rng):
        sets = []
        for _ in range(6):
            samples = rng.normal(size=(8, 5, 2))
            gt = rng.normal(size=(5, 2))
            sets.append(make_ps(samples, lls=rng.normal(size=8), gt=gt))
        curve = likelihood_rank_curve(sets)
        for rank in range(8):
            ades, fdes = [], []
            for ps in sets:
                order = np.argsort(-ps.log_likelihoods, kind="stable")
                s = ps.samples[order[rank]]
                ades.append(np.linalg.norm(s - ps.ground_truth, axis=1).mean())
                fdes.append(np.linalg.norm(s[-1] - ps.ground_truth[-1]))
            assert curve[rank, 0] == pytest.approx(np.mean(ades))
            assert curve[rank, 1] == pytest.approx(np.mean(fdes))
