"""The rigid registration driver.

Iterates project -> posteriors -> virtual observations -> pose step ->
covariance update until the rotation stops changing, then classifies each
observation to its maximum-posterior model point.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import ecm_core, solvers
from .errors import DegenerateDepth, InputShape
from .geometry import (
    CameraModel,
    RigidTransform,
    perspective_project,
    rotation_distance_sq,
)


@dataclass
class RegistrationConfig:
    solver: str = "lse"  # "traversal" | "lse"
    covariance_mode: str = "anisotropic"  # "anisotropic" | "isotropic"
    outlier: ecm_core.OutlierModel = field(default_factory=ecm_core.OutlierModel)
    max_iterations: int = 50
    convergence_tol: float = 1e-6
    traversal: solvers.TraversalConfig = field(default_factory=solvers.TraversalConfig)
    camera: CameraModel = field(default_factory=lambda: CameraModel(1016.0, 0.175))
    initial_pose: RigidTransform = field(default_factory=RigidTransform.identity)
    initial_covariance_scale: float = 1.0

    def __post_init__(self):
        if self.solver not in ("traversal", "lse"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.covariance_mode not in ("anisotropic", "isotropic"):
            raise ValueError(f"unknown covariance mode {self.covariance_mode!r}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.convergence_tol <= 0:
            raise ValueError("convergence_tol must be positive")


@dataclass
class IterationRecord:
    iteration: int
    pose: RigidTransform
    objective_before: float  # J at the incoming pose, current posteriors/covs
    objective_after: float  # J at the new pose, same posteriors/covs
    log_likelihood: float  # expected complete-data log-likelihood
    rotation_change_sq: float
    translation_change: float
    wall_time: dict


@dataclass
class RegistrationResult:
    pose: RigidTransform
    covariances: list
    posteriors: np.ndarray
    assignments: np.ndarray  # z_j, 0-based model index per observation
    virtual: ecm_core.VirtualObservations
    iterations_used: int
    converged: bool
    trace: list


def map_classify(posteriors):
    """Assign each observation to its argmax model point (lowest index on ties)."""
    return np.argmax(np.asarray(posteriors, dtype=float), axis=1)


def check_convergence(R_new, R_old, tol):
    """Rotation-change convergence test."""
    return rotation_distance_sq(R_new, R_old) < tol


def register(model_points, observations, cfg):
    """Run the full ECM registration loop.

    Returns the best pose (lowest objective iterate when the loop does not
    converge), the final covariances, posteriors and MAP assignments, plus a
    per-iteration trace.
    """
    X = np.atleast_2d(np.asarray(model_points, dtype=float))
    Y = np.atleast_2d(np.asarray(observations, dtype=float))
    n, m = X.shape[0], Y.shape[0]
    if n < 3:
        raise InputShape(f"need >= 3 model points, got {n}")
    if m < 1:
        raise InputShape(f"need >= 1 observation, got {m}")

    pose = cfg.initial_pose
    try:
        perspective_project(X, pose, cfg.camera)
    except DegenerateDepth as exc:
        raise DegenerateDepth(
            f"{exc}; the initial pose places model points on or behind the "
            "camera plane -- adjust the initial translation depth"
        ) from exc

    covs = [cfg.initial_covariance_scale * np.eye(2) for _ in range(n)]
    trace = []
    converged = False
    best = None  # (J_after, pose, covs, posteriors, virt)

    for q in range(1, cfg.max_iterations + 1):
        t0 = time.perf_counter()
        projected = perspective_project(X, pose, cfg.camera)
        posteriors = ecm_core.compute_posteriors(Y, projected, covs, cfg.outlier)
        virt = ecm_core.virtual_observations(posteriors, Y)
        t1 = time.perf_counter()

        J_before = ecm_core.pose_objective(pose, posteriors, Y, X, covs, cfg.camera)
        if cfg.solver == "traversal":
            new_pose = solvers.traversal_cm_step(
                pose, posteriors, covs, Y, X, cfg.camera, cfg.traversal)
        else:
            new_pose = solvers.lse_cm_step(pose, posteriors, Y, X, cfg.camera)
        J_after = ecm_core.pose_objective(new_pose, posteriors, Y, X, covs,
                                          cfg.camera)
        if J_after > J_before:
            # generalized CM safeguard: a conditional maximization step must
            # never worsen the criterion, so keep the incumbent pose when the
            # closed-form step overshoots (traversal cannot trigger this)
            new_pose = pose
            J_after = J_before
        t2 = time.perf_counter()

        new_projected = perspective_project(X, new_pose, cfg.camera)
        covs = ecm_core.update_covariances(posteriors, Y, new_projected,
                                           cfg.covariance_mode, previous=covs)
        t3 = time.perf_counter()

        ll = ecm_core.expected_complete_log_likelihood(
            new_pose, posteriors, Y, X, covs, cfg.camera)
        rot_change = rotation_distance_sq(new_pose.rotation, pose.rotation)
        trans_change = float(np.linalg.norm(new_pose.translation - pose.translation))
        trace.append(IterationRecord(
            iteration=q, pose=new_pose,
            objective_before=J_before, objective_after=J_after,
            log_likelihood=ll,
            rotation_change_sq=rot_change, translation_change=trans_change,
            wall_time={"e_step": t1 - t0, "cm_step": t2 - t1,
                       "covariance": t3 - t2},
        ))
        if best is None or J_after < best[0]:
            best = (J_after, new_pose, covs, posteriors, virt)

        prev_rotation = pose.rotation
        pose = new_pose
        if check_convergence(new_pose.rotation, prev_rotation,
                             cfg.convergence_tol):
            converged = True
            break

    if not converged:
        # fall back to the lowest-objective iterate
        _, pose, covs, _, _ = best
    projected = perspective_project(X, pose, cfg.camera)
    posteriors = ecm_core.compute_posteriors(Y, projected, covs, cfg.outlier)
    virt = ecm_core.virtual_observations(posteriors, Y)

    return RegistrationResult(
        pose=pose,
        covariances=covs,
        posteriors=posteriors,
        assignments=map_classify(posteriors),
        virtual=virt,
        iterations_used=len(trace),
        converged=converged,
        trace=trace,
    )
