"""E-step and covariance M-step for the mixture-based registration.

Posterior responsibilities, virtual observations with the zero-weight
("infinity") check, covariance updates and the pose objective. All functions
are pure; posterior rows are evaluated in the log domain with per-row
max shifting so squared distances up to ~1e4 neither overflow nor underflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SingularCovariance
from .geometry import invert_covariance_2x2, perspective_project

# Below this total responsibility a model point counts as unobserved.
WEIGHT_EPSILON = 1e-12
# Eigenvalue floor keeping updated covariances strictly positive definite.
COV_FLOOR = 1e-6
# Objective value marking a pose with a degenerate projection.
INFEASIBLE = math.inf


@dataclass(frozen=True)
class OutlierModel:
    """Optional uniform mixture component absorbing unexplained observations.

    Disabled by default: the synthetic scenes contain no outliers. When
    enabled, the component density is 1.5*sqrt(2*pi)/r^3 with r the
    working-volume radius in image units.
    """

    enabled: bool = False
    r: float | None = None

    def __post_init__(self):
        if self.enabled and not (self.r is not None and self.r > 0):
            raise ValueError("outlier model requires r > 0 when enabled")

    def density(self):
        if not self.enabled:
            return 0.0
        return 1.5 * math.sqrt(2.0 * math.pi) / self.r**3


@dataclass
class VirtualObservations:
    """Per model point: responsibility mass, weighted mean observation, validity."""

    weights: np.ndarray  # (n,)
    points: np.ndarray  # (n, 2); rows with valid == False are zeros
    valid: np.ndarray  # (n,) bool


def _inverse_stack(covs):
    """Inverses and log-determinants for a stack of 2x2 covariances."""
    covs = np.asarray(covs, dtype=float)
    n = covs.shape[0]
    invs = np.empty((n, 2, 2))
    logdets = np.empty(n)
    for i in range(n):
        invs[i], logdets[i] = invert_covariance_2x2(covs[i])
    return invs, logdets


def _sq_distances(observations, projected, invs):
    """Mahalanobis distance matrix d2[j, i] for observations vs projections."""
    obs = np.asarray(observations, dtype=float)
    proj = np.asarray(projected, dtype=float)
    r = obs[:, None, :] - proj[None, :, :]  # (m, n, 2)
    return np.einsum("mni,nij,mnj->mn", r, invs, r)


def compute_posteriors(observations, projected, covs, outlier=OutlierModel()):
    """Responsibility matrix alpha[j, i] of observation j for model point i.

    alpha_ji is the Gaussian posterior with per-point covariance, normalized
    over model points plus (optionally) the uniform outlier density.
    """
    invs, logdets = _inverse_stack(covs)
    d2 = _sq_distances(observations, projected, invs)
    logw = -0.5 * logdets[None, :] - 0.5 * d2  # (m, n)

    shift = logw.max(axis=1)
    phi = outlier.density()
    if phi > 0.0:
        shift = np.maximum(shift, math.log(phi))
    w = np.exp(logw - shift[:, None])
    denom = w.sum(axis=1)
    if phi > 0.0:
        denom = denom + np.exp(math.log(phi) - shift)
    return w / denom[:, None]


def virtual_observations(posteriors, observations):
    """Responsibility-weighted mean observation per model point.

    Model points whose column mass is below WEIGHT_EPSILON are flagged
    invalid (the zero-weight check for scenes with fewer observations than
    model points) and carry zero weight downstream.
    """
    alpha = np.asarray(posteriors, dtype=float)
    obs = np.asarray(observations, dtype=float)
    weights = alpha.sum(axis=0)
    valid = weights >= WEIGHT_EPSILON
    points = np.zeros((alpha.shape[1], 2))
    if np.any(valid):
        points[valid] = (alpha[:, valid].T @ obs) / weights[valid, None]
    return VirtualObservations(weights=weights, points=points, valid=valid)


def floor_spd(cov, floor=COV_FLOOR):
    """Symmetrize and clamp eigenvalues at the SPD floor."""
    c = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(c)
    vals = np.maximum(vals, floor)
    return (vecs * vals) @ vecs.T


def update_covariances(posteriors, observations, projected, mode="anisotropic",
                       previous=None, floor=COV_FLOOR):
    """Responsibility-weighted covariance update.

    anisotropic: per-point outer-product average, eigenvalue-floored.
    isotropic: one shared sigma^2 * I fit from all pairs.
    Model points with negligible responsibility keep their previous
    covariance (identity when no previous set is given).
    """
    alpha = np.asarray(posteriors, dtype=float)
    obs = np.asarray(observations, dtype=float)
    proj = np.asarray(projected, dtype=float)
    m, n = alpha.shape
    weights = alpha.sum(axis=0)
    valid = weights >= WEIGHT_EPSILON

    if previous is None:
        covs = [np.eye(2) for _ in range(n)]
    else:
        covs = [np.asarray(c, dtype=float).copy() for c in previous]

    r = obs[:, None, :] - proj[None, :, :]  # (m, n, 2)
    if mode == "anisotropic":
        outer = np.einsum("mn,mni,mnj->nij", alpha, r, r)
        for i in range(n):
            if valid[i]:
                covs[i] = floor_spd(outer[i] / weights[i], floor)
    elif mode == "isotropic":
        total = weights.sum()
        if total >= WEIGHT_EPSILON:
            d2 = np.einsum("mni,mni->mn", r, r)
            sigma2 = max(float((alpha * d2).sum() / (2.0 * total)), floor)
            shared = sigma2 * np.eye(2)
            for i in range(n):
                if valid[i]:
                    covs[i] = shared.copy()
    else:
        raise ValueError(f"unknown covariance mode {mode!r}")
    return covs


def pose_objective(transform, posteriors, observations, model_points, covs,
                   camera):
    """Weighted half-sum of squared Mahalanobis image residuals.

    Returns INFEASIBLE (inf) when any model point projects degenerately so
    grid search can skip the pose.
    """
    try:
        projected = perspective_project(model_points, transform, camera)
    except Exception:
        return INFEASIBLE
    invs, _ = _inverse_stack(covs)
    d2 = _sq_distances(observations, projected, invs)
    return 0.5 * float(np.sum(np.asarray(posteriors) * d2))


def pose_objective_many(rotations, translations, posteriors, observations,
                        model_points, invs, camera, depth_epsilon=1e-6):
    """Vectorized pose objective over a stack of candidate poses.

    rotations: (C, 3, 3), translations: (C, 3), invs: precomputed (n, 2, 2)
    inverse covariances. Infeasible candidates get inf.
    """
    X = np.asarray(model_points, dtype=float)  # (n, 3)
    cam_pts = np.einsum("cab,nb->cna", rotations, X) + translations[:, None, :]
    z = cam_pts[..., 2]  # (C, n)
    feasible = np.all(np.abs(z) > depth_epsilon, axis=1)
    J = np.full(rotations.shape[0], INFEASIBLE)
    if not np.any(feasible):
        return J
    zf = z[feasible]
    proj = camera.pixel_factor * cam_pts[feasible, :, :2] / zf[..., None]
    obs = np.asarray(observations, dtype=float)
    r = obs[None, :, None, :] - proj[:, None, :, :]  # (Cf, m, n, 2)
    d2 = np.einsum("cmni,nij,cmnj->cmn", r, invs, r)
    alpha = np.asarray(posteriors, dtype=float)
    J[feasible] = 0.5 * np.einsum("mn,cmn->c", alpha, d2)
    return J


def expected_complete_log_likelihood(transform, posteriors, observations,
                                     model_points, covs, camera):
    """Expected complete-data log-likelihood (up to additive constants).

    -1/2 * sum_ji alpha_ji * (mahalanobis_sq + log|cov_i|); used for the
    monotonicity trace, not for solving.
    """
    try:
        projected = perspective_project(model_points, transform, camera)
    except Exception:
        return -INFEASIBLE
    invs, logdets = _inverse_stack(covs)
    d2 = _sq_distances(observations, projected, invs)
    alpha = np.asarray(posteriors, dtype=float)
    return -0.5 * float(np.sum(alpha * (d2 + logdets[None, :])))
