"""Simulation and planning toolkit for probe-based spectral scanning of 3D objects.

A six-servo rotary platform carries a fiber spectrometer probe over a point
cloud. The package covers platform kinematics, point-cloud preprocessing,
viewpoint planning, acceptance-cone spectral association and a synthetic
scanner used to compare control strategies.
"""

from .errors import *  # noqa: F401,F403
from .kinematics import (
    PlatformGeometry,
    PlatformPose,
    ServoAngles,
    forward_kinematics,
    mean_quat_error,
    pose_rmse,
    quat_error,
    stewart_ik,
)
from .pointcloud import (
    CropBox,
    SpectralCloud,
    cluster_largest,
    crop,
    estimate_normals,
    remove_plane_ransac,
    voxel_downsample,
)
from .spectral import (
    AcceptanceCone,
    CalibrationPair,
    Instrument,
    Spectrum,
    associate_spectrum,
    calibrate_spectrum,
    cone_area,
    median_stack,
    sam_score,
)
from .planning import PlanConfig, ScanPlan, Viewpoint, normal_match_pose, plan_viewpoints
from .simulator import (
    MODES,
    Scene,
    ScanResult,
    SimConfig,
    compare_scans,
    ground_truth_scan,
    make_scene,
    run_scan,
)
from .config import PipelineConfig, load_config

__version__ = "0.1.0"
