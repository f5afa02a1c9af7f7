import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bayesvpr.errors import DegenerateMean
from bayesvpr.geometry import (
    Pose,
    PoseMetricParams,
    Twist,
    compose,
    exp_map,
    exp_map_batch,
    log_map,
    pose_distance,
    pose_from_row,
    pose_to_row,
    rotation_chordal_mean,
    skew,
)


def series_exp_se3(xi: Twist, terms: int = 20) -> np.ndarray:
    """Oracle: truncated power series of the 4x4 matrix exponential."""
    A = np.zeros((4, 4))
    A[:3, :3] = skew(xi.phi)
    A[:3, 3] = xi.rho
    out = np.eye(4)
    term = np.eye(4)
    for k in range(1, terms + 1):
        term = term @ A / k
        out = out + term
    return out


def random_twist(rng, max_angle=math.pi - 1e-3, max_trans=10.0) -> Twist:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, max_angle)
    rho = rng.uniform(-max_trans, max_trans, size=3)
    return Twist(rho, angle * axis)


def random_pose(rng) -> Pose:
    return exp_map(random_twist(rng))


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


class TestExpMap:
    def test_zero_twist_is_identity(self):
        T = exp_map(Twist.zero())
        np.testing.assert_allclose(T.rotation, np.eye(3), atol=1e-15)
        np.testing.assert_allclose(T.translation, np.zeros(3), atol=1e-15)

    def test_quarter_turn_yaw(self):
        T = exp_map(Twist([0, 0, 0], [0, 0, math.pi / 2]))
        np.testing.assert_allclose(T.rotation, rot_z(math.pi / 2), atol=1e-12)
        np.testing.assert_allclose(T.translation, np.zeros(3), atol=1e-15)

    def test_matches_series_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            xi = random_twist(rng, max_angle=math.pi - 1e-6)
            np.testing.assert_allclose(
                exp_map(xi).matrix(), series_exp_se3(xi), atol=1e-9)

    def test_small_angle_matches_series_oracle(self):
        rng = np.random.default_rng(8)
        for scale in [1e-6, 1e-9, 1e-12, 0.0]:
            phi = scale * rng.normal(size=3)
            xi = Twist(rng.normal(size=3), phi)
            np.testing.assert_allclose(
                exp_map(xi).matrix(), series_exp_se3(xi), atol=1e-12)

    def test_batch_agrees_with_scalar(self):
        rng = np.random.default_rng(9)
        xis = rng.normal(size=(50, 6))
        R, t = exp_map_batch(xis)
        for i in range(50):
            Ti = exp_map(Twist.from_vector(xis[i]))
            np.testing.assert_array_equal(R[i], Ti.rotation)
            np.testing.assert_array_equal(t[i], Ti.translation)


class TestLogMap:
    def test_identity_gives_zero(self):
        xi = log_map(Pose.identity())
        assert np.all(xi.rho == 0.0) and np.all(xi.phi == 0.0)

    def test_half_turn_sign_convention(self):
        xi = log_map(Pose(rot_z(math.pi), np.zeros(3)))
        np.testing.assert_allclose(xi.phi, [0.0, 0.0, math.pi], atol=1e-12)
        xi = log_map(Pose(rot_z(-math.pi), np.zeros(3)))
        np.testing.assert_allclose(xi.phi, [0.0, 0.0, math.pi], atol=1e-12)

    def test_round_trip_random_poses(self):
        rng = np.random.default_rng(10)
        for _ in range(200):
            T = random_pose(rng)
            T2 = exp_map(log_map(T))
            np.testing.assert_allclose(T2.rotation, T.rotation, atol=1e-9)
            np.testing.assert_allclose(T2.translation, T.translation, atol=1e-9)

    def test_phi_norm_bounded_by_pi(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            T = random_pose(rng)
            assert np.linalg.norm(log_map(T).phi) <= math.pi + 1e-12

    @given(st.integers(min_value=0, max_value=2 ** 32 - 1))
    @settings(max_examples=200, deadline=None)
    def test_round_trip_twists(self, seed):
        rng = np.random.default_rng(seed)
        xi = random_twist(rng, max_angle=math.pi - 1e-6)
        back = log_map(exp_map(xi))
        assert np.linalg.norm(back.vector() - xi.vector()) <= 1e-9

    def test_round_trip_near_pi(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            xi = random_twist(rng)
            xi = Twist(xi.rho, xi.phi / np.linalg.norm(xi.phi) * (math.pi - 1e-6))
            back = log_map(exp_map(xi))
            assert np.linalg.norm(back.vector() - xi.vector()) <= 1e-9


class TestCompose:
    def test_zero_twist_is_noop(self):
        rng = np.random.default_rng(13)
        T = random_pose(rng)
        T2 = compose(T, Twist.zero())
        np.testing.assert_allclose(T2.matrix(), T.matrix(), atol=1e-15)

    def test_identity_pose_gives_exp(self):
        rng = np.random.default_rng(14)
        xi = random_twist(rng)
        np.testing.assert_allclose(
            compose(Pose.identity(), xi).matrix(), exp_map(xi).matrix(), atol=1e-15)

    def test_twist_then_negation_recovers_pose(self):
        # oracle: explicit 4x4 multiplication
        rng = np.random.default_rng(15)
        for _ in range(50):
            T, xi = random_pose(rng), random_twist(rng)
            back = compose(compose(T, xi), -xi)
            oracle = T.matrix() @ series_exp_se3(xi) @ series_exp_se3(-xi)
            np.testing.assert_allclose(back.matrix(), oracle, atol=1e-9)
            np.testing.assert_allclose(back.matrix(), T.matrix(), atol=1e-9)

    def test_pure_pose_composition_associative(self):
        rng = np.random.default_rng(16)
        for _ in range(50):
            T1, T2, T3 = (random_pose(rng) for _ in range(3))
            left = ((T1 @ T2) @ T3).matrix()
            right = (T1 @ (T2 @ T3)).matrix()
            np.testing.assert_allclose(left, right, atol=1e-9)


class TestPoseDistance:
    params = PoseMetricParams(alpha=15.0)

    def test_self_distance_zero(self):
        rng = np.random.default_rng(17)
        T = random_pose(rng)
        assert pose_distance(T, T, self.params) == 0.0

    def test_pure_translation(self):
        T1 = Pose(np.eye(3), [0, 0, 0])
        T2 = Pose(np.eye(3), [3, 0, 0])
        assert pose_distance(T1, T2, self.params) == pytest.approx(3.0, abs=1e-12)

    def test_pure_rotation_quarter_turn(self):
        # trace formula by hand: angle(R1' R2) = pi/2, scaled by alpha = 15
        T1 = Pose(np.eye(3), np.zeros(3))
        T2 = Pose(rot_z(math.pi / 2), np.zeros(3))
        expected = 15.0 * math.pi / 2.0
        assert pose_distance(T1, T2, self.params) == pytest.approx(expected, abs=1e-9)
        assert expected == pytest.approx(23.5619, abs=1e-4)

    def test_metric_axioms_on_random_triples(self):
        rng = np.random.default_rng(18)
        for _ in range(1000):
            Ta, Tb, Tc = (random_pose(rng) for _ in range(3))
            dab = pose_distance(Ta, Tb, self.params)
            dba = pose_distance(Tb, Ta, self.params)
            dac = pose_distance(Ta, Tc, self.params)
            dcb = pose_distance(Tc, Tb, self.params)
            assert dab >= 0.0
            assert abs(dab - dba) <= 1e-12 * max(1.0, dab)
            assert dab <= dac + dcb + 1e-12

    def test_alpha_must_be_positive(self):
        with pytest.raises(ValueError):
            PoseMetricParams(alpha=0.0)


class TestChordalMean:
    def frobenius_objective(self, R, rotations, weights):
        return sum(w * np.linalg.norm(R - Ri) ** 2 for w, Ri in zip(weights, rotations))

    def test_single_rotation(self):
        rng = np.random.default_rng(19)
        R = random_pose(rng).rotation
        np.testing.assert_allclose(rotation_chordal_mean([R], [1.0]), R, atol=1e-12)

    def test_symmetric_pair_averages_to_identity(self):
        for angle in [0.3, 0.8, 1.2]:
            mean = rotation_chordal_mean([rot_z(angle), rot_z(-angle)], [1.0, 1.0])
            np.testing.assert_allclose(mean, np.eye(3), atol=1e-12)

    def test_halfway_rotation_matches_grid_search(self):
        rotations = [rot_z(0.0), rot_z(math.pi / 3)]
        weights = [1.0, 1.0]
        mean = rotation_chordal_mean(rotations, weights)
        # oracle: brute-force the objective over z-rotations
        grid = np.linspace(0.0, math.pi / 3, 200001)
        objs = [self.frobenius_objective(rot_z(a), rotations, weights) for a in grid]
        best = grid[int(np.argmin(objs))]
        assert best == pytest.approx(math.pi / 6, abs=1e-5)
        np.testing.assert_allclose(mean, rot_z(math.pi / 6), atol=1e-9)

    def test_beats_random_candidates(self):
        rng = np.random.default_rng(20)
        for _ in range(20):
            rotations = [random_pose(rng).rotation for _ in range(5)]
            weights = rng.uniform(0.1, 1.0, size=5)
            mean = rotation_chordal_mean(rotations, weights)
            f_mean = self.frobenius_objective(mean, rotations, weights)
            for _ in range(200):
                cand = random_pose(rng).rotation
                assert f_mean <= self.frobenius_objective(cand, rotations, weights) + 1e-12

    def test_degenerate_sum_raises(self):
        with pytest.raises(DegenerateMean):
            rotation_chordal_mean([rot_z(math.pi / 2), rot_z(-math.pi / 2)], [1.0, 1.0])

    def test_result_is_rotation(self):
        rng = np.random.default_rng(21)
        Rs = [random_pose(rng).rotation for _ in range(4)]
        mean = rotation_chordal_mean(Rs, [0.1, 0.2, 0.3, 0.4])
        np.testing.assert_allclose(mean.T @ mean, np.eye(3), atol=1e-12)
        assert np.linalg.det(mean) == pytest.approx(1.0, abs=1e-12)


class TestPoseRows:
    def test_round_trip(self):
        rng = np.random.default_rng(22)
        for _ in range(50):
            T = random_pose(rng)
            T2 = pose_from_row(pose_to_row(T))
            np.testing.assert_allclose(T2.rotation, T.rotation, atol=1e-12)
            np.testing.assert_allclose(T2.translation, T.translation, atol=1e-12)

    def test_qw_nonnegative(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            row = pose_to_row(random_pose(rng))
            assert float(row.split()[3]) >= 0.0

    def test_bad_row_rejected(self):
        with pytest.raises(ValueError):
            pose_from_row("1 2 3 4")
