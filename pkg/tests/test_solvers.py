"""Tests for the traversal grid-search and least-squares pose solvers."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecmpr.ecm_core import _inverse_stack, pose_objective, pose_objective_many
from ecmpr.errors import (
    InsufficientCorrespondences,
    NoFeasiblePose,
    RankDeficient,
)
from ecmpr.geometry import (
    CameraModel,
    RigidTransform,
    apply_rigid,
    euler_to_rotation,
    euler_to_rotation_many,
    perspective_project,
    rotation_to_euler,
)
from ecmpr.solvers import (
    CorrespondenceSet,
    TraversalConfig,
    harden_correspondences,
    lse_cm_step,
    traversal_cm_step,
    traversal_to_fixed_point,
    umeyama_fit,
)

CAMERA = CameraModel(1016.0, 0.175)


def make_pairs(x, y, weights=None):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    k = x.shape[0]
    return CorrespondenceSet(
        model_points=x,
        lifted_points=y,
        weights=np.ones(k) if weights is None else np.asarray(weights),
        model_indices=np.arange(k),
        observation_indices=np.arange(k),
    )


def random_rigid(seed):
    rng = np.random.default_rng(seed)
    R = euler_to_rotation(rng.uniform(-math.pi, math.pi, size=3))
    t = rng.uniform(-100, 100, size=3)
    return RigidTransform(R, t)


class TestHardenCorrespondences:
    def test_identity_posteriors_match_diagonally(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(-100, 100, size=(4, 3)) + [0.0, 0.0, 900.0]
        T = RigidTransform.identity()
        observations = perspective_project(X, T, CAMERA)
        pairs = harden_correspondences(np.eye(4), observations, X, T, CAMERA)
        assert pairs.model_indices.tolist() == [0, 1, 2, 3]
        assert pairs.observation_indices.tolist() == [0, 1, 2, 3]

    def test_backprojection_inverts_projection_at_true_depth(self):
        rng = np.random.default_rng(1)
        X = rng.uniform(-100, 100, size=(4, 3)) + [0.0, 0.0, 900.0]
        T = random_rigid(1)
        T = RigidTransform(T.rotation, T.translation + [0.0, 0.0, 900.0])
        observations = perspective_project(X, T, CAMERA)
        pairs = harden_correspondences(np.eye(4), observations, X, T, CAMERA)
        assert np.allclose(pairs.lifted_points, apply_rigid(X, T), atol=1e-9)

    def test_collision_keeps_higher_posterior(self):
        # both observations argmax model point 0; observation 1 wins
        alpha = np.array([[0.6, 0.4, 0.0], [0.9, 0.05, 0.05],
                          [0.0, 0.1, 0.9], [0.1, 0.8, 0.1]])
        X = np.array([[0.0, 0.0, 900.0], [50.0, 0.0, 900.0],
                      [0.0, 50.0, 900.0]])
        observations = np.zeros((4, 2))
        pairs = harden_correspondences(alpha, observations, X,
                                       RigidTransform.identity(), CAMERA)
        row = pairs.model_indices.tolist().index(0)
        assert pairs.observation_indices[row] == 1

    def test_fewer_than_three_matches_raises(self):
        alpha = np.array([[0.9, 0.1, 0.0], [0.8, 0.2, 0.0]])
        X = np.array([[0.0, 0.0, 900.0], [50.0, 0.0, 900.0],
                      [0.0, 50.0, 900.0]])
        with pytest.raises(InsufficientCorrespondences):
            harden_correspondences(alpha, np.zeros((2, 2)), X,
                                   RigidTransform.identity(), CAMERA)


class TestUmeyamaFit:
    def test_identity_pairs(self):
        x = np.random.default_rng(0).uniform(-10, 10, size=(5, 3))
        pose = umeyama_fit(make_pairs(x, x))
        assert np.allclose(pose.rotation, np.eye(3), atol=1e-12)
        assert np.allclose(pose.translation, np.zeros(3), atol=1e-10)

    @pytest.mark.parametrize("seed", range(10))
    def test_exact_recovery(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-50, 50, size=(10, 3))
        T = random_rigid(seed + 100)
        y = apply_rigid(x, T)
        pose = umeyama_fit(make_pairs(x, y))
        assert np.linalg.norm(pose.rotation - T.rotation) < 1e-10
        assert np.linalg.norm(pose.translation - T.translation) < 1e-8

    def test_reflection_guard_on_mirrored_planar_pairs(self):
        # planar cloud mapped through an in-plane mirror: the unguarded
        # closed form would return a reflection
        rng = np.random.default_rng(3)
        x = np.column_stack([rng.uniform(-10, 10, size=(6, 2)), np.zeros(6)])
        y = x @ np.diag([-1.0, 1.0, 1.0])
        pose = umeyama_fit(make_pairs(x, y))
        assert math.isclose(np.linalg.det(pose.rotation), 1.0, abs_tol=1e-9)

    @pytest.mark.parametrize("seed", range(20))
    def test_determinant_positive_on_degenerate_leaning_inputs(self, seed):
        rng = np.random.default_rng(seed)
        x = np.column_stack([rng.uniform(-10, 10, size=(5, 2)),
                             rng.normal(scale=1e-6, size=5)])
        y = rng.uniform(-10, 10, size=(5, 3))
        pose = umeyama_fit(make_pairs(x, y))
        assert math.isclose(np.linalg.det(pose.rotation), 1.0, abs_tol=1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_equivariance(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-50, 50, size=(8, 3))
        y = rng.uniform(-50, 50, size=(8, 3))
        base = umeyama_fit(make_pairs(x, y))
        Q = euler_to_rotation(rng.uniform(-math.pi, math.pi, size=3))
        d = rng.uniform(-20, 20, size=3)
        moved = umeyama_fit(make_pairs(x, y @ Q.T + d))
        assert np.allclose(moved.rotation, Q @ base.rotation, atol=1e-9)
        assert np.allclose(moved.translation, Q @ base.translation + d,
                           atol=1e-9)

    def test_noise_free_residual_is_tiny(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(-50, 50, size=(6, 3))
        T = random_rigid(6)
        y = apply_rigid(x, T)
        pose = umeyama_fit(make_pairs(x, y))
        residual = np.sum((y - apply_rigid(x, pose)) ** 2)
        assert residual < 1e-16 * np.sum(y ** 2)

    def test_collinear_pairs_raise(self):
        x = np.column_stack([np.arange(5.0), np.zeros(5), np.zeros(5)])
        with pytest.raises(RankDeficient):
            umeyama_fit(make_pairs(x, 2.0 * x + 1.0))

    def test_two_pairs_raise(self):
        with pytest.raises(InsufficientCorrespondences):
            umeyama_fit(make_pairs(np.zeros((2, 3)), np.ones((2, 3))))


def small_grid_config():
    return TraversalConfig(
        angle_range=(0.0, 2.0 * math.pi),
        angle_coarse_step=2.0 * math.pi / 8.0,
        translation_range=(-100.0, 100.0),
        translation_coarse_step=25.0,
        refine_levels=0,
        cycles=1,
        recenter_translation=False,
    )


def random_small_instance(seed, n=4):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-200, 200, size=(n, 3)) + [0.0, 0.0, 900.0]
    observations = rng.uniform(-60, 60, size=(n, 2))
    alpha = rng.uniform(0.1, 1.0, size=(n, n))
    alpha /= alpha.sum(axis=1, keepdims=True)
    covs = []
    for _ in range(n):
        A = rng.uniform(-1, 1, size=(2, 2))
        covs.append(A @ A.T + 0.5 * np.eye(2))
    return X, observations, alpha, covs


def brute_force_minimum(cfg, alpha, observations, X, covs):
    angle_vals = np.arange(cfg.angle_range[0], cfg.angle_range[1],
                           cfg.angle_coarse_step)
    lo, hi = cfg.translation_range
    t_vals = np.arange(lo, hi + 0.5 * cfg.translation_coarse_step,
                       cfg.translation_coarse_step)
    invs, _ = _inverse_stack(covs)
    angle_combos = np.array(list(itertools.product(angle_vals, repeat=3)))
    rotations = euler_to_rotation_many(angle_combos)
    best = np.inf
    for t in itertools.product(t_vals, repeat=3):
        J = pose_objective_many(rotations,
                                np.tile(t, (len(angle_combos), 1)),
                                alpha, observations, X, invs, CAMERA)
        best = min(best, float(np.min(J)))
    return best


class TestTraversal:
    @pytest.mark.parametrize("seed", range(5))
    def test_never_increases_objective(self, seed):
        X, observations, alpha, covs = random_small_instance(seed)
        start = RigidTransform.identity()
        J_in = pose_objective(start, alpha, observations, X, covs, CAMERA)
        pose = traversal_cm_step(start, alpha, covs, observations, X, CAMERA,
                                 small_grid_config())
        J_out = pose_objective(pose, alpha, observations, X, covs, CAMERA)
        assert J_out <= J_in + 1e-12

    def test_on_grid_ground_truth_reached_exactly(self):
        rng = np.random.default_rng(11)
        X = rng.uniform(-150, 150, size=(4, 3)) + [0.0, 0.0, 900.0]
        cfg = small_grid_config()
        gt = RigidTransform(
            euler_to_rotation((0.0, 0.0, 2.0 * math.pi / 8.0)),
            [25.0, -50.0, 0.0],
        )
        observations = perspective_project(X, gt, CAMERA)
        covs = [np.eye(2)] * 4
        pose = traversal_cm_step(RigidTransform.identity(), np.eye(4), covs,
                                 observations, X, CAMERA, cfg)
        J = pose_objective(pose, np.eye(4), observations, X, covs, CAMERA)
        assert J == pytest.approx(0.0, abs=1e-15)

    def test_incumbent_preserved_when_optimal(self):
        rng = np.random.default_rng(12)
        X = rng.uniform(-150, 150, size=(4, 3)) + [0.0, 0.0, 900.0]
        cfg = small_grid_config()
        gt = RigidTransform(np.eye(3), [25.0, 0.0, -25.0])
        observations = perspective_project(X, gt, CAMERA)
        covs = [np.eye(2)] * 4
        pose = traversal_cm_step(gt, np.eye(4), covs, observations, X,
                                 CAMERA, cfg)
        J = pose_objective(pose, np.eye(4), observations, X, covs, CAMERA)
        assert J == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize("seed", range(4))
    def test_fixed_point_matches_brute_force(self, seed):
        X, observations, alpha, covs = random_small_instance(seed)
        cfg = small_grid_config()
        pose = traversal_to_fixed_point(RigidTransform.identity(), alpha,
                                        covs, observations, X, CAMERA, cfg)
        J = pose_objective(pose, alpha, observations, X, covs, CAMERA)
        expected = brute_force_minimum(cfg, alpha, observations, X, covs)
        assert J <= expected + 1e-9 * max(1.0, abs(expected))

    def test_no_feasible_pose_raises(self):
        # every candidate keeps the points on the camera plane
        X = np.array([[10.0, 0.0, 0.0], [0.0, 10.0, 0.0], [5.0, 5.0, 0.0]])
        cfg = TraversalConfig(
            angle_range=(0.0, 1e-9), angle_coarse_step=1.0,
            translation_range=(-1e-9, 1e-9), translation_coarse_step=1.0,
            refine_levels=0, cycles=1, recenter_translation=False,
        )
        with pytest.raises(NoFeasiblePose):
            traversal_cm_step(RigidTransform.identity(), np.eye(3),
                              [np.eye(2)] * 3, np.zeros((3, 2)), X, CAMERA,
                              cfg)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TraversalConfig(angle_coarse_step=0.0)
        with pytest.raises(ValueError):
            TraversalConfig(refine_shrink=1.5)
        with pytest.raises(ValueError):
            TraversalConfig(cycles=0)


class TestLseCmStep:
    def test_exact_posteriors_recover_pose(self):
        rng = np.random.default_rng(21)
        X = rng.uniform(-100, 100, size=(6, 3)) + [0.0, 0.0, 900.0]
        gt = RigidTransform(euler_to_rotation((0.05, -0.08, 0.1)),
                            [10.0, -20.0, 30.0])
        observations = perspective_project(X, gt, CAMERA)
        pose = lse_cm_step(gt, np.eye(6), observations, X, CAMERA)
        assert np.linalg.norm(pose.rotation - gt.rotation) < 1e-9
        assert np.linalg.norm(pose.translation - gt.translation) < 1e-6

    def test_two_matched_points_raise(self):
        alpha = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        X = np.array([[0.0, 0.0, 900.0], [50.0, 0.0, 900.0],
                      [0.0, 50.0, 900.0]])
        with pytest.raises(InsufficientCorrespondences):
            lse_cm_step(RigidTransform.identity(), alpha, np.zeros((2, 2)),
                        X, CAMERA)
