import math

import numpy as np
import pytest

from bayesvpr.errors import NotConverged, ZeroPosterior
from bayesvpr.geometry import Pose
from bayesvpr.map_store import (
    LocalizationMap,
    MeasurementParams,
    calibrate_lambda1,
)
from bayesvpr.topo import (
    BeliefVector,
    TopoParams,
    topo_check_convergence,
    topo_init,
    topo_pose_estimate,
    topo_update,
)


def line_map(values, d=1):
    """Map with scalar embeddings; distances from a zero query are |values|."""
    values = np.asarray(values, dtype=np.float32)
    n = len(values)
    emb = np.zeros((n, d), dtype=np.float32)
    emb[:, 0] = values
    poses = [Pose(np.eye(3), [i, 0.0, 0.0]) for i in range(n)]
    return LocalizationMap(poses, emb)


def dense_transition(n, w_lower, w_upper):
    """Oracle: materialize the row-normalized banded transition matrix."""
    E = np.zeros((n, n))
    for s in range(n):
        targets = [s + o for o in range(w_lower, w_upper + 1) if 0 <= s + o < n]
        if not targets:
            targets = [s]
        for tgt in targets:
            E[s, tgt] = 1.0 / len(targets)
    return E


def dense_forward_step(p, E, likelihood):
    post = likelihood * (E.T @ p)
    return post / post.sum()


class TestInit:
    def test_lambda_zero_uniform(self):
        lmap = line_map([0.0, 1.0, 2.0, 5.0])
        belief = topo_init(np.zeros(1), lmap, MeasurementParams(0.0))
        np.testing.assert_allclose(belief.probs, 0.25, atol=1e-15)
        assert belief.t == 1

    def test_single_reference(self):
        belief = topo_init(np.zeros(1), line_map([3.0]), MeasurementParams(1.0))
        np.testing.assert_array_equal(belief.probs, [1.0])

    def test_concentration_on_matching_reference(self):
        # hand-computed on N=3: weights exp(0), exp(-50), exp(-50)
        lmap = line_map([0.0, 5.0, 5.0])
        belief = topo_init(np.zeros(1), lmap, MeasurementParams(10.0))
        expected = 1.0 / (1.0 + 2.0 * math.exp(-50.0))
        assert belief.probs[0] == pytest.approx(expected, rel=1e-12)
        assert belief.probs[0] >= 0.99


class TestBandedUpdate:
    def test_five_state_hand_case(self):
        # delta at 2, offsets {0, 1}, uniform likelihood -> 0.5 at 2 and 3
        lmap = line_map(np.zeros(5))
        belief = BeliefVector(np.array([0, 0, 1.0, 0, 0]))
        tp = TopoParams(w_lower=0, w_upper=1, tau_threshold=0.99)
        out = topo_update(belief, np.zeros(1), lmap, tp, MeasurementParams(0.0))
        np.testing.assert_allclose(out.probs, [0, 0, 0.5, 0.5, 0], atol=1e-15)
        assert out.t == 2

    def test_uniform_stays_uniform_in_interior(self):
        n = 100
        lmap = line_map(np.zeros(n))
        tp = TopoParams(w_lower=-2, w_upper=10)
        belief = BeliefVector(np.full(n, 1.0 / n))
        out = topo_update(belief, np.zeros(1), lmap, tp, MeasurementParams(0.0))
        # interior targets draw only from full-band sources
        interior = slice(tp.w_upper - tp.w_lower, n - tp.w_upper + tp.w_lower)
        np.testing.assert_allclose(out.probs[interior], 1.0 / n, atol=1e-12)

    def test_empty_band_keeps_mass(self):
        # forward-only band at the last state has nowhere to go
        lmap = line_map(np.zeros(3))
        tp = TopoParams(w_lower=1, w_upper=2)
        belief = BeliefVector(np.array([0.0, 0.0, 1.0]))
        out = topo_update(belief, np.zeros(1), lmap, tp, MeasurementParams(0.0))
        np.testing.assert_allclose(out.probs, [0, 0, 1.0], atol=1e-15)

    def test_loop_band_wraps(self):
        lmap = line_map(np.zeros(5))
        belief = BeliefVector(np.array([0, 0, 0, 0, 1.0]))
        tp = TopoParams(w_lower=0, w_upper=1, loop=True)
        out = topo_update(belief, np.zeros(1), lmap, tp, MeasurementParams(0.0))
        np.testing.assert_allclose(out.probs, [0.5, 0, 0, 0, 0.5], atol=1e-15)
        tp = TopoParams(w_lower=0, w_upper=1, loop=False)
        out = topo_update(belief, np.zeros(1), lmap, tp, MeasurementParams(0.0))
        np.testing.assert_allclose(out.probs, [0, 0, 0, 0, 1.0], atol=1e-15)

    def test_matches_dense_oracle_100_instances(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            n = int(rng.integers(3, 51))
            w_lower = int(rng.integers(-3, 3))
            w_upper = w_lower + int(rng.integers(0, 7))
            steps = int(rng.integers(1, 11))
            d = 4
            emb = rng.uniform(-1, 1, size=(n, d)).astype(np.float32)
            poses = [Pose(np.eye(3), [i, 0, 0]) for i in range(n)]
            lmap = LocalizationMap(poses, emb)
            mp = MeasurementParams(float(rng.uniform(0, 3)))
            tp = TopoParams(w_lower=w_lower, w_upper=w_upper)
            E = dense_transition(n, w_lower, w_upper)

            q0 = rng.uniform(-1, 1, size=d)
            belief = topo_init(q0, lmap, mp)
            diff = lmap.embeddings.astype(float) - q0
            lik = np.exp(-mp.lambda1 * np.linalg.norm(diff, axis=1))
            p_ref = lik / lik.sum()
            np.testing.assert_allclose(belief.probs, p_ref, atol=1e-12)

            for _ in range(steps):
                q = rng.uniform(-1, 1, size=d)
                belief = topo_update(belief, q, lmap, tp, mp)
                diff = lmap.embeddings.astype(float) - q
                lik = np.exp(-mp.lambda1 * np.linalg.norm(diff, axis=1))
                p_ref = dense_forward_step(p_ref, E, lik)
                np.testing.assert_allclose(belief.probs, p_ref, atol=1e-12)
                assert abs(float(belief.probs.sum()) - 1.0) <= 1e-12

    def test_likelihood_scale_invariance(self):
        # shifting every embedding distance by a constant multiplies all
        # likelihoods by one factor, which must cancel
        rng = np.random.default_rng(7)
        # eighths stay exact in float32 even after the +5 shift
        values = rng.integers(4, 25, size=20) / 8.0
        belief = BeliefVector(rng.dirichlet(np.ones(20)))
        tp = TopoParams()
        mp = MeasurementParams(2.0)
        out1 = topo_update(belief, np.zeros(1), line_map(values), tp, mp)
        out2 = topo_update(belief, np.zeros(1), line_map(values + 5.0), tp, mp)
        np.testing.assert_allclose(out2.probs, out1.probs, atol=1e-12)
        tau1, _, i1 = topo_check_convergence(out1, tp)
        tau2, _, i2 = topo_check_convergence(out2, tp)
        assert i1 == i2 and tau1 == pytest.approx(tau2, abs=1e-12)

    def test_zero_posterior(self):
        lmap = line_map([10.0, 0.0, 0.0])
        belief = BeliefVector(np.array([1.0, 0.0, 0.0]))
        tp = TopoParams(w_lower=0, w_upper=0)
        with pytest.raises(ZeroPosterior):
            topo_update(belief, np.zeros(1), lmap, tp, MeasurementParams(500.0))


class TestConvergence:
    def test_delta_mass(self):
        probs = np.zeros(50)
        probs[31] = 1.0
        tau, converged, idx = topo_check_convergence(BeliefVector(probs),
                                                     TopoParams(tau_threshold=0.999))
        assert tau == 1.0 and converged and idx == 31

    def test_uniform_window_mass(self):
        belief = BeliefVector(np.full(100, 0.01))
        tau, converged, idx = topo_check_convergence(belief, TopoParams(window=6))
        assert idx == 0  # argmax tie -> lowest index
        # window clamps to [0, 6] at the left edge
        assert tau == pytest.approx(0.07, abs=1e-12)
        assert not converged

    def test_uniform_window_mass_interior(self):
        probs = np.full(100, (1.0 - 0.011) / 99)
        probs[50] = 0.011
        tau, _, idx = topo_check_convergence(BeliefVector(probs),
                                             TopoParams(window=6))
        assert idx == 50
        expected = 0.011 + 12 * (1.0 - 0.011) / 99
        assert tau == pytest.approx(expected, rel=1e-12)

    def test_split_mass_disjoint_windows(self):
        probs = np.zeros(200)
        probs[0] = 0.5
        probs[199] = 0.5
        tau, converged, idx = topo_check_convergence(BeliefVector(probs),
                                                     TopoParams(window=6))
        assert idx == 0 and tau == 0.5 and not converged


class TestPoseEstimate:
    def test_delta_mass_returns_reference(self):
        lmap = line_map(np.zeros(10))
        probs = np.zeros(10)
        probs[7] = 1.0
        T = topo_pose_estimate(BeliefVector(probs), lmap,
                               TopoParams(tau_threshold=0.9))
        np.testing.assert_array_equal(T.translation, lmap.pose(7).translation)

    def test_two_point_floor(self):
        lmap = line_map(np.zeros(12))
        probs = np.zeros(12)
        probs[4] = 0.5
        probs[5] = 0.5
        T = topo_pose_estimate(BeliefVector(probs), lmap,
                               TopoParams(tau_threshold=0.9))
        assert T.translation[0] == 4.0  # floor(4.5)

    def test_window_renormalized_mean(self):
        lmap = line_map(np.zeros(20))
        probs = np.zeros(20)
        probs[10] = 0.9
        probs[12] = 0.1
        T = topo_pose_estimate(BeliefVector(probs), lmap,
                               TopoParams(tau_threshold=0.9))
        assert T.translation[0] == 10.0  # floor(10.2)

    def test_not_converged(self):
        lmap = line_map(np.zeros(40))
        probs = np.full(40, 0.025)
        with pytest.raises(NotConverged):
            topo_pose_estimate(BeliefVector(probs), lmap,
                               TopoParams(tau_threshold=0.9))


def fourier_features(positions, rng, d=16, length_scale=1.0):
    freqs = rng.normal(scale=1.0 / length_scale, size=d)
    phases = rng.uniform(0, 2 * math.pi, size=d)
    return (np.cos(np.outer(positions, freqs) + phases)
            * math.sqrt(2.0 / d)).astype(np.float32)


def steps_to_convergence(emb, start, tp, stride=6, n_steps=25):
    """Query walks `stride` reference indices per step, like 3 m queries
    over 0.5 m references."""
    n = emb.shape[0]
    poses = [Pose(np.eye(3), [i, 0, 0]) for i in range(n)]
    lmap = LocalizationMap(poses, emb)
    mp = calibrate_lambda1(emb[start], lmap)
    mp = MeasurementParams(2.0 * mp.lambda1)
    belief = topo_init(emb[start], lmap, mp)
    for step in range(1, n_steps + 1):
        tau, converged, _ = topo_check_convergence(belief, tp)
        if converged:
            return step
        idx = min(start + stride * step, n - 1)
        belief = topo_update(belief, emb[idx], lmap, tp, mp)
    return n_steps + 1


class TestAliasingLatency:
    def test_duplicated_segment_delays_convergence(self):
        tp = TopoParams(tau_threshold=0.9)
        delays = []
        for seed in range(60):
            rng = np.random.default_rng(seed)
            emb = fourier_features(np.arange(200, dtype=float), rng)
            aliased = emb.copy()
            aliased[120:150] = emb[10:40]
            start = int(rng.integers(10, 28))
            s_clean = steps_to_convergence(emb, start, tp)
            s_alias = steps_to_convergence(aliased, start, tp)
            delays.append(s_alias - s_clean)
        delays = np.array(delays)
        assert np.mean(delays) > 0.5
        assert np.mean(delays >= 0) >= 0.9
