"""Strict JSON (de)serialization for the CLI configuration schemas.

Angles are degrees and lengths are millimetres in every JSON document;
conversion to radians happens here, once, at the boundary. Unknown keys are
an error.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .ecm_core import OutlierModel
from .errors import ConfigError
from .geometry import CameraModel, EulerAngles, RigidTransform, euler_to_rotation
from .registration import RegistrationConfig
from .solvers import TraversalConfig
from .synthdata import SceneSpec


def _check_keys(d, allowed, context):
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(
            f"{context}: unknown keys {unknown}; allowed keys are {sorted(allowed)}"
        )


def load_json(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def camera_from_dict(d):
    _check_keys(d, {"focal_mm", "scale_mm_per_pixel"}, "camera")
    return CameraModel(**d)


def outlier_from_dict(d):
    _check_keys(d, {"enabled", "r"}, "outlier")
    return OutlierModel(enabled=d.get("enabled", False), r=d.get("r"))


def traversal_from_dict(d):
    allowed = {"angle_range_deg", "angle_coarse_step_deg", "translation_range",
               "translation_coarse_step", "refine_levels", "refine_shrink",
               "cycles", "recenter_translation"}
    _check_keys(d, allowed, "traversal")
    kwargs = {}
    if "angle_range_deg" in d:
        lo, hi = d["angle_range_deg"]
        kwargs["angle_range"] = (math.radians(lo), math.radians(hi))
    if "angle_coarse_step_deg" in d:
        kwargs["angle_coarse_step"] = math.radians(d["angle_coarse_step_deg"])
    for key in ("translation_range", "translation_coarse_step", "refine_levels",
                "refine_shrink", "cycles", "recenter_translation"):
        if key in d:
            value = d[key]
            kwargs[key] = tuple(value) if key == "translation_range" else value
    return TraversalConfig(**kwargs)


def pose_from_dict(d):
    _check_keys(d, {"euler_deg", "translation"}, "initial_pose")
    angles = EulerAngles(*np.radians(d.get("euler_deg", [0.0, 0.0, 0.0])))
    return RigidTransform(euler_to_rotation(angles),
                          np.asarray(d.get("translation", [0.0, 0.0, 0.0])))


def registration_from_dict(d):
    allowed = {"solver", "covariance_mode", "outlier", "max_iterations",
               "convergence_tol", "traversal", "camera", "initial_pose",
               "initial_covariance_scale"}
    _check_keys(d, allowed, "registration")
    kwargs = {}
    for key in ("solver", "covariance_mode", "max_iterations",
                "convergence_tol", "initial_covariance_scale"):
        if key in d:
            kwargs[key] = d[key]
    if "outlier" in d:
        kwargs["outlier"] = outlier_from_dict(d["outlier"])
    if "traversal" in d:
        kwargs["traversal"] = traversal_from_dict(d["traversal"])
    if "camera" in d:
        kwargs["camera"] = camera_from_dict(d["camera"])
    if "initial_pose" in d:
        kwargs["initial_pose"] = pose_from_dict(d["initial_pose"])
    try:
        return RegistrationConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def scene_from_dict(d):
    allowed = {"n_points", "point_cloud_radius", "ground_truth_angles_deg",
               "ground_truth_translation", "camera", "center_depth",
               "noise_sigma", "observed_fraction", "seed"}
    _check_keys(d, allowed, "scene")
    kwargs = {}
    for key in ("n_points", "point_cloud_radius", "center_depth", "noise_sigma",
                "observed_fraction", "seed"):
        if key in d:
            kwargs[key] = d[key]
    if "ground_truth_angles_deg" in d:
        kwargs["ground_truth_angles"] = EulerAngles(
            *np.radians(d["ground_truth_angles_deg"]))
    if "ground_truth_translation" in d:
        kwargs["ground_truth_translation"] = np.asarray(
            d["ground_truth_translation"], dtype=float)
    if "camera" in d:
        kwargs["camera"] = camera_from_dict(d["camera"])
    try:
        return SceneSpec(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def pose_to_dict(pose):
    from .geometry import rotation_to_euler

    e = rotation_to_euler(pose.rotation).canonical()
    return {
        "rotation": pose.rotation.reshape(-1).tolist(),
        "translation": pose.translation.tolist(),
        "euler_deg": [math.degrees(e.rx), math.degrees(e.ry), math.degrees(e.rz)],
    }
