"""Pose solvers for the conditional maximization step.

Two interchangeable solvers:
  * traversal: cyclic coordinate descent over Euler angles and translation
    components on a coarse-to-fine grid, minimizing the weighted Mahalanobis
    image objective;
  * least-squares estimation: harden correspondences from the posteriors,
    back-project matched observations to 3D at the matched depths, then fit
    the pose in closed form via SVD of the weighted cross-covariance.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .ecm_core import (
    INFEASIBLE,
    WEIGHT_EPSILON,
    _inverse_stack,
    pose_objective_many,
)
from .errors import InsufficientCorrespondences, NoFeasiblePose, RankDeficient
from .geometry import (
    DEPTH_EPSILON,
    RigidTransform,
    apply_rigid,
    euler_to_rotation_many,
    rotation_to_euler,
)

logger = logging.getLogger(__name__)


@dataclass
class TraversalConfig:
    """Grid-search settings for the traversal solver.

    The coarse pass scans each Euler angle over [0, 2*pi) and each
    translation component over a window of translation_range around the
    incumbent (recenter_translation=False scans absolute coordinates
    instead). Each refinement level shrinks the step by refine_shrink and
    searches a window of one previous step around the incumbent.
    """

    angle_range: tuple = (0.0, 2.0 * math.pi)
    angle_coarse_step: float = math.radians(1.0)
    translation_range: tuple = (-1000.0, 1000.0)
    translation_coarse_step: float = 20.0
    refine_levels: int = 3
    refine_shrink: float = 0.1
    cycles: int = 2
    recenter_translation: bool = True

    def __post_init__(self):
        if self.angle_coarse_step <= 0 or self.translation_coarse_step <= 0:
            raise ValueError("grid steps must be positive")
        if self.refine_levels < 0:
            raise ValueError("refine_levels must be >= 0")
        if not (0.0 < self.refine_shrink < 1.0):
            raise ValueError("refine_shrink must be in (0, 1)")
        if self.cycles < 1:
            raise ValueError("cycles must be >= 1")


@dataclass
class CorrespondenceSet:
    """Matched (model point, back-projected observation) pairs with weights."""

    model_points: np.ndarray  # (k, 3)
    lifted_points: np.ndarray  # (k, 3) observations lifted to camera space
    weights: np.ndarray  # (k,) positive
    model_indices: np.ndarray  # (k,)
    observation_indices: np.ndarray  # (k,)


def _coordinate_sweep(angles, t, axis, candidates, is_angle, best_J, posteriors,
                      observations, model_points, invs, camera):
    """Evaluate J over candidate values of one pose coordinate; keep the best.

    Ties go to the lowest candidate index; the incumbent is appended last so
    the result never increases J.
    """
    values = np.append(candidates, angles[axis] if is_angle else t[axis])
    C = values.shape[0]
    if is_angle:
        trial = np.tile(angles, (C, 1))
        trial[:, axis] = values
        Rs = euler_to_rotation_many(trial)
        ts = np.tile(t, (C, 1))
    else:
        Rs = np.tile(euler_to_rotation_many(angles[None, :])[0], (C, 1, 1))
        ts = np.tile(t, (C, 1))
        ts[:, axis] = values
    J = pose_objective_many(Rs, ts, posteriors, observations, model_points,
                            invs, camera)
    k = int(np.argmin(J))
    if J[k] <= best_J:
        if is_angle:
            angles[axis] = values[k]
        else:
            t[axis] = values[k]
        best_J = float(J[k])
    return best_J


# joint coarse grids up to this many candidate poses are scanned
# exhaustively instead of by per-coordinate sweeps
EXHAUSTIVE_LIMIT = 500_000
_EXHAUSTIVE_CHUNK = 50_000


def _exhaustive_scan(angles, t, angle_cands, trans_cands, best_J, posteriors,
                     observations, model_points, invs, camera):
    """Jointly evaluate J over the full Cartesian coarse grid; keep the best.

    Ties go to the lowest flat grid index; the incumbent is kept when no
    grid candidate improves on it.
    """
    grids = np.meshgrid(*angle_cands, *trans_cands, indexing="ij")
    combos = np.stack([g.reshape(-1) for g in grids], axis=1)  # (C, 6)
    best_idx, best_val = -1, best_J
    for start in range(0, combos.shape[0], _EXHAUSTIVE_CHUNK):
        chunk = combos[start:start + _EXHAUSTIVE_CHUNK]
        J = pose_objective_many(euler_to_rotation_many(chunk[:, :3]),
                                chunk[:, 3:], posteriors, observations,
                                model_points, invs, camera)
        k = int(np.argmin(J))
        if J[k] < best_val:
            best_idx, best_val = start + k, float(J[k])
    if best_idx >= 0:
        angles[:] = combos[best_idx, :3]
        t[:] = combos[best_idx, 3:]
        best_J = best_val
    return best_J


def traversal_cm_step(transform, posteriors, covs, observations, model_points,
                      camera, cfg=None):
    """Grid search over the six pose parameters.

    When the full Cartesian coarse grid has at most EXHAUSTIVE_LIMIT
    candidate poses it is scanned exhaustively (the exact minimizer on the
    grid); otherwise each Euler angle is swept with the current translation,
    then each translation component with the updated rotation, repeating for
    cfg.cycles. The window is then re-centered and shrunk cfg.refine_levels
    times. The incumbent pose is always a candidate, so the returned pose
    never has a larger objective.
    """
    if cfg is None:
        cfg = TraversalConfig()
    e = rotation_to_euler(transform.rotation)
    angles = e.as_array()
    t = transform.translation.copy()
    invs, _ = _inverse_stack(covs)

    incumbent_J = pose_objective_many(
        euler_to_rotation_many(angles[None, :]),
        t[None, :], posteriors, observations, model_points, invs, camera,
    )[0]
    best_J = float(incumbent_J)

    coarse_angles = np.arange(cfg.angle_range[0], cfg.angle_range[1],
                              cfg.angle_coarse_step)
    lo, hi = cfg.translation_range
    coarse_offsets = np.arange(lo, hi + 0.5 * cfg.translation_coarse_step,
                               cfg.translation_coarse_step)
    coarse_total = coarse_angles.size ** 3 * coarse_offsets.size ** 3
    exhaustive_coarse = 0 < coarse_total <= EXHAUSTIVE_LIMIT
    if exhaustive_coarse:
        trans_cands = [coarse_offsets
                       + (t[axis] if cfg.recenter_translation else 0.0)
                       for axis in range(3)]
        best_J = _exhaustive_scan(angles, t, [coarse_angles] * 3, trans_cands,
                                  best_J, posteriors, observations,
                                  model_points, invs, camera)

    angle_step = cfg.angle_coarse_step
    trans_step = cfg.translation_coarse_step
    for level in range(cfg.refine_levels + 1):
        if level == 0 and exhaustive_coarse:
            angle_step *= cfg.refine_shrink
            trans_step *= cfg.refine_shrink
            continue
        for _ in range(cfg.cycles):
            for axis in range(3):
                if level == 0:
                    cand = np.arange(cfg.angle_range[0], cfg.angle_range[1],
                                     angle_step)
                else:
                    half = angle_step / cfg.refine_shrink
                    cand = angles[axis] + np.arange(-half, half + 0.5 * angle_step,
                                                    angle_step)
                best_J = _coordinate_sweep(angles, t, axis, cand, True, best_J,
                                           posteriors, observations,
                                           model_points, invs, camera)
            for axis in range(3):
                if level == 0:
                    lo, hi = cfg.translation_range
                    offsets = np.arange(lo, hi + 0.5 * trans_step, trans_step)
                    cand = offsets + (t[axis] if cfg.recenter_translation else 0.0)
                else:
                    half = trans_step / cfg.refine_shrink
                    cand = t[axis] + np.arange(-half, half + 0.5 * trans_step,
                                               trans_step)
                best_J = _coordinate_sweep(angles, t, axis, cand, False, best_J,
                                           posteriors, observations,
                                           model_points, invs, camera)
        angle_step *= cfg.refine_shrink
        trans_step *= cfg.refine_shrink

    if not np.isfinite(best_J):
        raise NoFeasiblePose("every grid candidate had a degenerate projection")
    return RigidTransform(euler_to_rotation_many(angles[None, :])[0], t)


def traversal_to_fixed_point(transform, posteriors, covs, observations,
                             model_points, camera, cfg, max_rounds=100):
    """Repeat traversal_cm_step until the pose stops changing."""
    current = transform
    for _ in range(max_rounds):
        nxt = traversal_cm_step(current, posteriors, covs, observations,
                                model_points, camera, cfg)
        if (np.array_equal(nxt.rotation, current.rotation)
                and np.array_equal(nxt.translation, current.translation)):
            return nxt
        current = nxt
    return current


def harden_correspondences(posteriors, observations, model_points, transform,
                           camera):
    """MAP-match observations to model points and lift them to 3D.

    Each observation takes its argmax model point (ties to the lowest
    index); when several observations claim one model point only the
    highest-posterior observation is kept (ties to the lowest observation
    index). Matched observations are back-projected at the depth of the
    matched transformed model point.
    """
    alpha = np.asarray(posteriors, dtype=float)
    obs = np.asarray(observations, dtype=float)
    X = np.asarray(model_points, dtype=float)
    m = alpha.shape[0]

    best_i = np.argmax(alpha, axis=1)
    # resolve collisions: keep the observation with the larger posterior
    keeper = {}
    for j in range(m):
        i = int(best_i[j])
        if i not in keeper or alpha[j, i] > alpha[keeper[i], i]:
            keeper[i] = j

    cam_pts = apply_rigid(X, transform)
    weights = alpha.sum(axis=0)
    fs = camera.pixel_factor

    model_idx, obs_idx = [], []
    model_sel, lifted, w = [], [], []
    for i in sorted(keeper):
        j = keeper[i]
        z = cam_pts[i, 2]
        u, v = obs[j]
        lifted.append(np.array([u * z / fs, v * z / fs, z]))
        model_sel.append(X[i])
        w.append(max(weights[i], WEIGHT_EPSILON))
        model_idx.append(i)
        obs_idx.append(j)

    if len(model_idx) < 3:
        raise InsufficientCorrespondences(
            f"only {len(model_idx)} distinct model points matched (need >= 3)"
        )
    return CorrespondenceSet(
        model_points=np.asarray(model_sel),
        lifted_points=np.asarray(lifted),
        weights=np.asarray(w),
        model_indices=np.asarray(model_idx),
        observation_indices=np.asarray(obs_idx),
    )


def umeyama_fit(pairs):
    """Closed-form weighted rigid fit of lifted points onto model points.

    SVD of the weighted cross-covariance with a determinant guard so the
    returned rotation is always proper (no reflections); scale is fixed
    to 1 since the camera scale is known.
    """
    x = np.asarray(pairs.model_points, dtype=float)
    y = np.asarray(pairs.lifted_points, dtype=float)
    w = np.asarray(pairs.weights, dtype=float)
    if x.shape[0] < 3:
        raise InsufficientCorrespondences("need at least 3 pairs")
    wsum = w.sum()
    wn = w / wsum
    mu_x = wn @ x
    mu_y = wn @ y
    dx = x - mu_x
    dy = y - mu_y
    cross = (dy * wn[:, None]).T @ dx  # Sigma_xy, weighted

    U, d, Vt = np.linalg.svd(cross)
    if d[0] <= 0 or d[1] <= 1e-12 * d[0]:
        raise RankDeficient("cross-covariance rank < 2; pairs nearly collinear")

    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    t = mu_y - R @ mu_x

    # spread diagnostics (scale stays fixed at 1 for the rigid fit)
    sigma_x2 = float(wn @ np.sum(dx * dx, axis=1))
    sigma_y2 = float(wn @ np.sum(dy * dy, axis=1))
    logger.debug("umeyama_fit: sigma_x^2=%.6g sigma_y^2=%.6g", sigma_x2, sigma_y2)
    return RigidTransform(R, t)


LSE_REFINE_TOL = 1e-24
LSE_REFINE_MAX_ITER = 100


def lse_cm_step(transform, posteriors, observations, model_points, camera):
    """Harden correspondences, back-project, and fit the pose in closed form.

    The back-projection depths depend on the pose being estimated, so the
    lift-and-fit pair is iterated on the fixed matched set until the fitted
    rotation stops changing: each round re-lifts the matched observations at
    the depths induced by the latest pose and refits.  On noise-free input
    with correct matches this lands on the exact perspective pose, so a
    subsequent CM step with unchanged matches reproduces it to machine
    precision.
    """
    pairs = harden_correspondences(posteriors, observations, model_points,
                                   transform, camera)
    pose = umeyama_fit(pairs)

    matched_obs = np.asarray(observations, dtype=float)[pairs.observation_indices]
    fs = camera.pixel_factor
    previous_change = math.inf
    for _ in range(LSE_REFINE_MAX_ITER):
        depths = apply_rigid(pairs.model_points, pose)[:, 2]
        if np.any(depths <= DEPTH_EPSILON):
            break
        lifted = np.column_stack((matched_obs * depths[:, None] / fs, depths))
        refined = umeyama_fit(replace(pairs, lifted_points=lifted))
        change = float(np.sum((refined.rotation - pose.rotation) ** 2))
        pose = refined
        # stop at the fixed point, or once floating-point jitter dominates
        if change < LSE_REFINE_TOL or change >= previous_change:
            break
        previous_change = change
    return pose
