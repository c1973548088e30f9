"""Seeded synthetic scene generation for the registration experiments.

Observations are the perspective projections of the model points after the
ground-truth motion (R, t) applied in camera coordinates; recovering that
motion from an identity initialization is only feasible when the motion
moves the projected points by less than their image spacing.  The generator
therefore places the constellation where the motion is least visible:

  * the cloud is centered on the image-fixed curve of the motion -- the 3D
    points whose projection is unchanged by (R, t) -- at a requested depth;
  * around that center the first-order image displacement of an offset d is
    M d with M = J(Rc + t) R - J(c) (J = projection Jacobian), so the points
    are spread inside an ellipsoid aligned with the right singular vectors
    of M: widest along the zero-displacement direction, narrower along the
    slow direction, thin along the fast one;
  * candidate points are drawn with a best-of-K rule that maximizes the
    minimum pairwise image distance in both the initial and the transformed
    projections.

When the image-fixed curve does not reach the requested depth (e.g. the
identity motion) the center falls back to the screw axis of the motion and
then to the optical axis.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateScene
from .geometry import (
    CameraModel,
    EulerAngles,
    RigidTransform,
    apply_rigid,
    euler_to_rotation,
    perspective_project,
    rotation_to_euler,
)

# minimum usable depth for generated points, in front of the camera
MIN_SCENE_DEPTH = 50.0
# per-point image displacement budget (pixels); doubled adaptively when the
# motion is too large for any candidate to fit the current budget
DISPLACEMENT_BUDGET_PX = 4.0
# candidates drawn per point for the max-min image-spacing rule
CANDIDATE_POOL = 200
# center depths tried, as multiples of SceneSpec.center_depth
DEPTH_MULTIPLIERS = (1.0, 0.75, 1.5, 2.5)


@dataclass
class SceneSpec:
    n_points: int = 14
    point_cloud_radius: float = 300.0
    ground_truth_angles: EulerAngles = field(
        default_factory=lambda: EulerAngles(0.0, 0.0, 0.0))
    ground_truth_translation: np.ndarray = field(
        default_factory=lambda: np.zeros(3))
    camera: CameraModel = field(default_factory=lambda: CameraModel(1016.0, 0.175))
    center_depth: float = 750.0
    noise_sigma: float = 0.0
    observed_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.ground_truth_translation = np.asarray(
            self.ground_truth_translation, dtype=float).reshape(3)
        if self.n_points < 3:
            raise ValueError("n_points must be >= 3")
        if self.point_cloud_radius <= 0:
            raise ValueError("point_cloud_radius must be positive")
        if self.center_depth <= MIN_SCENE_DEPTH:
            raise ValueError(f"center_depth must exceed {MIN_SCENE_DEPTH}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not (0.0 < self.observed_fraction <= 1.0):
            raise ValueError("observed_fraction must be in (0, 1]")

    def true_pose(self):
        return RigidTransform(euler_to_rotation(self.ground_truth_angles),
                              self.ground_truth_translation.copy())


@dataclass
class Scene:
    model_points: np.ndarray  # (n, 3)
    observations: np.ndarray  # (m, 2)
    true_pose: RigidTransform
    true_correspondence: np.ndarray  # (m,) observation -> model index
    spec: SceneSpec


def _projection_jacobian(p, fs):
    x, y, z = p
    return fs * np.array([[1.0 / z, 0.0, -x / z ** 2],
                          [0.0, 1.0 / z, -y / z ** 2]])


def _image_fixed_center(pose, camera, depth):
    """Newton-solve for a point at the given depth whose projection is
    unchanged by the motion; None if no admissible solution is found."""
    fs = camera.pixel_factor
    R, t = pose.rotation, pose.translation

    def solve(xy0):
        xy = np.array(xy0, dtype=float)
        for _ in range(80):
            p = np.array([xy[0], xy[1], depth])
            q = R @ p + t
            if abs(p[2]) < 1e-9 or abs(q[2]) < 1e-9:
                return None
            residual = fs * q[:2] / q[2] - fs * p[:2] / p[2]
            if np.dot(residual, residual) < 1e-18:
                if q[2] > MIN_SCENE_DEPTH:
                    return p
                return None
            A = (_projection_jacobian(q, fs) @ R
                 - _projection_jacobian(p, fs))[:, :2]
            try:
                step = np.linalg.solve(A, residual)
            except np.linalg.LinAlgError:
                return None
            if not np.all(np.isfinite(step)):
                return None
            xy -= step
        return None

    guesses = [(0.0, 0.0)]
    guesses += [(sx * depth, sy * depth)
                for sx in (-1.0, 0.0, 1.0) for sy in (-1.0, 0.0, 1.0)
                if (sx, sy) != (0.0, 0.0)]
    for guess in guesses:
        c = solve(guess)
        if c is not None:
            return c
    return None


def _screw_axis_center(pose, depth):
    """Point of least 3D displacement: on the screw axis of the motion at the
    given depth, or the axis point nearest the camera ray when the axis is
    nearly parallel to the image plane; None for (near-)identity rotations."""
    R, t = pose.rotation, pose.translation
    w, v = np.linalg.eig(R)
    k = int(np.argmin(np.abs(w - 1.0)))
    axis = np.real(v[:, k])
    norm = np.linalg.norm(axis)
    if norm == 0.0 or np.linalg.norm(R - np.eye(3)) < 1e-9:
        return None
    axis = axis / norm
    if axis[2] < 0:
        axis = -axis
    t_perp = t - (axis @ t) * axis
    p_ax, *_ = np.linalg.lstsq(np.eye(3) - R, t_perp, rcond=None)
    if abs(axis[2]) > 0.2:
        c = p_ax + (depth - p_ax[2]) / axis[2] * axis
    else:
        c = p_ax
    if c[2] <= MIN_SCENE_DEPTH or (R @ c + t)[2] <= MIN_SCENE_DEPTH:
        return None
    return c


def _candidate_centers(pose, camera, depth):
    centers = []
    c = _image_fixed_center(pose, camera, depth)
    if c is not None:
        centers.append(c)
    c = _screw_axis_center(pose, depth)
    if c is not None:
        centers.append(c)
    centers.append(np.array([0.0, 0.0, depth]))
    return centers


def _budget_ellipsoid_axes(pose, camera, center, radius, budget):
    """Semi-axis vectors spanning the offsets whose first-order image
    displacement stays within the budget, capped at the cloud radius."""
    fs = camera.pixel_factor
    q = pose.rotation @ center + pose.translation
    M = (_projection_jacobian(q, fs) @ pose.rotation
         - _projection_jacobian(center, fs))
    _, sv, Vt = np.linalg.svd(M)
    axes = [radius * Vt[2]]  # null direction of the displacement field
    for k in (1, 0):
        length = radius if sv[k] * radius <= budget else budget / sv[k]
        axes.append(length * Vt[k])
    return axes


def _sample_constellation(rng, spec, pose, center):
    """Best-of-K sampling inside the displacement-budget ellipsoid around the
    center, maximizing the minimum pairwise image distance of both the
    initial and the transformed projections.  Candidates whose exact image
    displacement overshoots the (first-order) budget by more than 2x are
    rejected; the budget doubles whenever no candidate fits, so large
    motions still yield a valid (if harder) scene.  None on failure."""
    fs = spec.camera.pixel_factor
    R, t = pose.rotation, pose.translation

    budget = DISPLACEMENT_BUDGET_PX
    points, initial_uv, moved_uv, displacement = [], [], [], []
    while len(points) < spec.n_points:
        axes = np.asarray(_budget_ellipsoid_axes(pose, spec.camera, center,
                                                 spec.point_cloud_radius, budget))
        u = rng.uniform(-1.0, 1.0, size=(CANDIDATE_POOL, 3))
        u = u[np.einsum("ij,ij->i", u, u) <= 1.0]
        candidates = center + u @ axes
        moved = candidates @ R.T + t
        ok = (candidates[:, 2] > MIN_SCENE_DEPTH) & (moved[:, 2] > MIN_SCENE_DEPTH)
        candidates, moved = candidates[ok], moved[ok]
        uv0 = fs * candidates[:, :2] / candidates[:, 2:3]
        uv1 = fs * moved[:, :2] / moved[:, 2:3]
        disp = np.linalg.norm(uv1 - uv0, axis=1)
        ok = disp <= 2.0 * budget
        candidates, uv0, uv1, disp = candidates[ok], uv0[ok], uv1[ok], disp[ok]
        if candidates.shape[0] == 0:
            if budget > 1e6:
                return None
            budget *= 2.0
            continue
        if points:
            # pairwise matching margin against the points placed so far:
            # every transformed projection must stay closer to its own initial
            # projection than to anyone else's, with room to spare
            cross0 = np.linalg.norm(uv1[:, None] - np.asarray(initial_uv), axis=2)
            cross1 = np.linalg.norm(np.asarray(moved_uv)[None, :] - uv0[:, None],
                                    axis=2)
            margin = np.minimum((cross0 - disp[:, None]).min(axis=1),
                                (cross1 - np.asarray(displacement)).min(axis=1))
            pick = int(np.argmax(margin))
        else:
            pick = int(np.argmin(disp))
        points.append(candidates[pick])
        initial_uv.append(uv0[pick])
        moved_uv.append(uv1[pick])
        displacement.append(disp[pick])
    return np.asarray(points)


def _constellation_margin(points, pose, camera):
    """Matching-robustness score: how much closer each transformed projection
    is to its own initial projection than to any other point's, minimized
    over points.  Positive means nearest-neighbor matching at the identity
    pose is correct with that many pixels to spare."""
    fs = camera.pixel_factor
    moved = points @ pose.rotation.T + pose.translation
    uv0 = fs * points[:, :2] / points[:, 2:3]
    uv1 = fs * moved[:, :2] / moved[:, 2:3]
    dist = np.linalg.norm(uv1[:, None] - uv0[None, :], axis=2)
    correct = np.diag(dist).copy()
    np.fill_diagonal(dist, np.inf)
    return float(np.min(dist.min(axis=1) - correct))


def add_noise(points, sigma, rng):
    """Add independent per-coordinate Gaussian noise; sigma=0 is a no-op.

    rng may be an integer seed or a numpy Generator.
    """
    pts = np.asarray(points, dtype=float)
    if sigma == 0.0:
        return pts.copy()
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return pts + rng.normal(scale=sigma, size=pts.shape)


def generate_scene(spec):
    """Generate a reproducible synthetic scene from the spec and its seed.

    Constellations are sampled around every candidate center (image-fixed,
    screw-axis, optical-axis) at several depths; the one with the largest
    spacing-vs-displacement margin wins.
    """
    rng = np.random.default_rng(spec.seed)
    pose = spec.true_pose()

    centers = []
    for multiplier in DEPTH_MULTIPLIERS:
        centers.extend(_candidate_centers(pose, spec.camera,
                                          multiplier * spec.center_depth))

    model_points, best_margin = None, -np.inf
    for index, center in enumerate(centers):
        center_rng = np.random.default_rng((spec.seed, index))
        candidate = _sample_constellation(center_rng, spec, pose, center)
        if candidate is None:
            continue
        depths_moved = apply_rigid(candidate, pose)[:, 2]
        if (np.any(candidate[:, 2] <= MIN_SCENE_DEPTH)
                or np.any(depths_moved <= MIN_SCENE_DEPTH)):
            continue
        margin = _constellation_margin(candidate, pose, spec.camera)
        if margin > best_margin:
            best_margin, model_points = margin, candidate
    if model_points is None:
        raise DegenerateScene(
            "could not place all points in front of the camera at any "
            "candidate center"
        )

    m = int(np.ceil(spec.observed_fraction * spec.n_points))
    observed = np.sort(rng.choice(spec.n_points, size=m, replace=False))
    projected = perspective_project(model_points[observed], pose, spec.camera)
    noisy = add_noise(projected, spec.noise_sigma, rng)
    order = rng.permutation(m)
    return Scene(
        model_points=model_points,
        observations=noisy[order],
        true_pose=pose,
        true_correspondence=observed[order],
        spec=spec,
    )


# ---------------------------------------------------------------------------
# serialization: model/observation CSVs plus a JSON sidecar


def _spec_to_dict(spec):
    a = spec.ground_truth_angles
    return {
        "n_points": spec.n_points,
        "point_cloud_radius": spec.point_cloud_radius,
        "ground_truth_angles_deg": [np.degrees(a.rx), np.degrees(a.ry),
                                    np.degrees(a.rz)],
        "ground_truth_translation": spec.ground_truth_translation.tolist(),
        "camera": {"focal_mm": spec.camera.focal_mm,
                   "scale_mm_per_pixel": spec.camera.scale_mm_per_pixel},
        "center_depth": spec.center_depth,
        "noise_sigma": spec.noise_sigma,
        "observed_fraction": spec.observed_fraction,
        "seed": spec.seed,
    }


def _spec_from_dict(d):
    angles_deg = d["ground_truth_angles_deg"]
    return SceneSpec(
        n_points=d["n_points"],
        point_cloud_radius=d["point_cloud_radius"],
        ground_truth_angles=EulerAngles(*np.radians(angles_deg)),
        ground_truth_translation=np.asarray(d["ground_truth_translation"]),
        camera=CameraModel(**d["camera"]),
        center_depth=d["center_depth"],
        noise_sigma=d["noise_sigma"],
        observed_fraction=d["observed_fraction"],
        seed=d["seed"],
    )


def save_scene(scene, out_dir, stem="scene"):
    """Write <stem>_model.csv, <stem>_observations.csv and <stem>.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model_path = out_dir / f"{stem}_model.csv"
    obs_path = out_dir / f"{stem}_observations.csv"
    meta_path = out_dir / f"{stem}.json"

    write_points_csv(model_path, scene.model_points, ("x", "y", "z"))
    write_points_csv(obs_path, scene.observations, ("u", "v"))

    e = rotation_to_euler(scene.true_pose.rotation).canonical()
    meta = {
        "spec": _spec_to_dict(scene.spec),
        "true_pose": {
            "rotation": scene.true_pose.rotation.reshape(-1).tolist(),
            "translation": scene.true_pose.translation.tolist(),
            "euler_deg": [np.degrees(e.rx), np.degrees(e.ry), np.degrees(e.rz)],
        },
        "true_correspondence": scene.true_correspondence.tolist(),
    }
    meta_path.write_text(json.dumps(meta, indent=2))
    return model_path, obs_path, meta_path


def load_scene(out_dir, stem="scene"):
    out_dir = Path(out_dir)
    model_points = read_points_csv(out_dir / f"{stem}_model.csv", ("x", "y", "z"))
    observations = read_points_csv(out_dir / f"{stem}_observations.csv", ("u", "v"))
    meta = json.loads((out_dir / f"{stem}.json").read_text())
    pose = RigidTransform(
        np.asarray(meta["true_pose"]["rotation"]).reshape(3, 3),
        np.asarray(meta["true_pose"]["translation"]),
    )
    return Scene(
        model_points=model_points,
        observations=observations,
        true_pose=pose,
        true_correspondence=np.asarray(meta["true_correspondence"], dtype=int),
        spec=_spec_from_dict(meta["spec"]),
    )


def write_points_csv(path, points, header):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in np.atleast_2d(np.asarray(points, dtype=float)):
            writer.writerow([repr(float(v)) for v in row])


def read_points_csv(path, expected_header):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != tuple(expected_header):
            raise ValueError(f"{path}: expected header {expected_header}, "
                             f"got {header}")
        rows = [[float(v) for v in row] for row in reader if row]
    return np.asarray(rows, dtype=float)
