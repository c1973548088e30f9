"""2D-3D rigid point registration under a pinhole camera via ECM.

Aligns a 3D model point set to 2D image observations with unknown
correspondences, using a Gaussian mixture E-step and either a grid-search
(traversal) or closed-form SVD (least-squares) pose step.
"""

from .ecm_core import OutlierModel, VirtualObservations
from .errors import (
    ConfigError,
    DegenerateDepth,
    DegenerateScene,
    InputShape,
    InsufficientCorrespondences,
    NoFeasiblePose,
    RankDeficient,
    RegistrationError,
    SingularCovariance,
)
from .geometry import (
    CameraModel,
    EulerAngles,
    RigidTransform,
    apply_rigid,
    euler_to_rotation,
    mahalanobis_sq,
    perspective_project,
    rotation_distance_sq,
    rotation_to_euler,
)
from .harness import Metrics, compute_metrics, run_comparison, run_rotation_sweep
from .registration import (
    RegistrationConfig,
    RegistrationResult,
    check_convergence,
    map_classify,
    register,
)
from .solvers import TraversalConfig, lse_cm_step, traversal_cm_step, umeyama_fit
from .synthdata import Scene, SceneSpec, add_noise, generate_scene

__version__ = "0.1.0"
