"""Viewpoint planning over a cleaned cloud and ToF-based surface normal matching.

A viewpoint places the probe tip a fixed distance along the surface normal.
The pose is split into an arm frame (fixed orientation, offset above the
probe) and a platform pose relative to that frame. In the planning convention
the platform z axis points along the outward surface normal and the fibre
looks down the platform's -z axis.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateContacts, EmptyCloud, OutOfRange, Unreachable
from .kinematics import PlatformGeometry, PlatformPose, rot_x, stewart_ik
from .pointcloud import SpectralCloud, estimate_normals, voxel_downsample

TOF_RANGE = 0.06


def rotation_between(a, b):
    """Smallest rotation taking unit vector ``a`` onto unit vector ``b``."""
    a = np.asarray(a, dtype=float) / np.linalg.norm(a)
    b = np.asarray(b, dtype=float) / np.linalg.norm(b)
    v = np.cross(a, b)
    c = float(a @ b)
    s = np.linalg.norm(v)
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        # antiparallel: half turn about any axis perpendicular to a
        p = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(p) < 1e-6:
            p = np.cross(a, [0.0, 1.0, 0.0])
        p /= np.linalg.norm(p)
        return 2.0 * np.outer(p, p) - np.eye(3)
    k = np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])
    return np.eye(3) + k + k @ k * ((1.0 - c) / s**2)


def make_frame(R=None, t=None):
    T = np.eye(4)
    if R is not None:
        T[:3, :3] = R
    if t is not None:
        T[:3, 3] = t
    return T


def default_tof_layout(radius=0.02):
    """Three sensor mounts on the platform at 120 degree increments."""
    a = np.deg2rad([90.0, 210.0, 330.0])
    return radius * np.column_stack([np.cos(a), np.sin(a)])


@dataclass(frozen=True, eq=False)
class PlanConfig:
    voxel_size: float = 0.01
    scan_dist: float = 0.03
    arm_offset: tuple = (0.0, 0.0, 0.05)
    camera_to_base: np.ndarray = field(default_factory=lambda: np.eye(4))
    up: tuple = (0.0, 0.0, 1.0)
    sensor_origin: tuple = (0.0, 0.0, 1.0)
    normal_k: int = 30
    normal_source: str = "downsampled"
    order: str = "tour"

    def __post_init__(self):
        object.__setattr__(self, "arm_offset", tuple(float(v) for v in self.arm_offset))
        object.__setattr__(self, "up", tuple(float(v) for v in self.up))
        object.__setattr__(self, "sensor_origin", tuple(float(v) for v in self.sensor_origin))
        object.__setattr__(self, "camera_to_base", np.asarray(self.camera_to_base, dtype=float).reshape(4, 4))
        problems = self.validate()
        if problems:
            raise ValueError("; ".join(problems))

    def validate(self):
        problems = []
        if not self.voxel_size > 0:
            problems.append("voxel_size must be positive")
        if not self.scan_dist > 0:
            problems.append("scan_dist must be positive")
        if len(self.arm_offset) != 3:
            problems.append("arm_offset needs 3 components")
        if self.order not in ("tour", "cloud"):
            problems.append("order must be 'tour' or 'cloud'")
        if self.normal_source not in ("downsampled", "full", "given"):
            problems.append("normal_source must be 'downsampled', 'full' or 'given'")
        if self.normal_k < 3:
            problems.append("normal_k must be at least 3")
        R = self.camera_to_base[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9) or np.linalg.det(R) < 0:
            problems.append("camera_to_base must be a rigid transform")
        return problems

    def to_dict(self):
        return {
            "voxel_size": self.voxel_size,
            "scan_dist": self.scan_dist,
            "arm_offset": list(self.arm_offset),
            "camera_to_base": self.camera_to_base.reshape(-1).tolist(),
            "up": list(self.up),
            "sensor_origin": list(self.sensor_origin),
            "normal_k": self.normal_k,
            "normal_source": self.normal_source,
            "order": self.order,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "camera_to_base" in d:
            d["camera_to_base"] = np.asarray(d["camera_to_base"], dtype=float).reshape(4, 4)
        return cls(**d)

    @property
    def arm_rotation(self):
        return rotation_between([0.0, 0.0, 1.0], self.up)


def mount_transform(cfg, geom):
    """Pose of the platform's kinematic base frame inside the arm frame.

    The base hangs upside down (its z axis along -up) and is placed so the
    platform at home height coincides with the nominal probe position
    ``-arm_offset``.
    """
    M = rot_x(math.pi)
    nominal = -cfg.arm_rotation.T @ np.asarray(cfg.arm_offset)
    origin = nominal - M @ np.array([0.0, 0.0, geom.home_height])
    return make_frame(M, origin)


def to_kinematic_pose(stewart_pose, cfg, geom):
    """Convert a planning-convention platform pose to the kinematic base frame."""
    K = mount_transform(cfg, geom)
    P = stewart_pose.matrix @ make_frame(rot_x(math.pi))
    return PlatformPose.from_matrix(np.linalg.inv(K) @ P)


def check_feasible(stewart_pose, cfg, geom):
    """Servo angles for the pose, or None when it leaves the workspace."""
    try:
        return stewart_ik(geom, to_kinematic_pose(stewart_pose, cfg, geom))
    except Unreachable:
        return None


@dataclass(frozen=True, eq=False)
class Viewpoint:
    target_index: int
    surface_point: np.ndarray
    surface_normal: np.ndarray
    probe_point: np.ndarray
    arm_frame: np.ndarray
    stewart_pose: PlatformPose
    feasible: bool = True
    servo_angles: tuple | None = None

    def probe_frame(self, camera_to_base=None):
        """Probe frame in the cloud frame (arm frame mapped back from the base)."""
        T = self.arm_frame @ self.stewart_pose.matrix
        if camera_to_base is not None:
            T = np.linalg.inv(camera_to_base) @ T
        return T

    def to_dict(self):
        return {
            "target_index": int(self.target_index),
            "surface_point": [float(v) for v in self.surface_point],
            "surface_normal": [float(v) for v in self.surface_normal],
            "probe_point": [float(v) for v in self.probe_point],
            "arm_frame": [float(v) for v in np.asarray(self.arm_frame).reshape(-1)],
            "stewart_frame": [float(v) for v in self.stewart_pose.matrix.reshape(-1)],
            "stewart_pose": list(self.stewart_pose.translation + self.stewart_pose.euler),
            "feasible": bool(self.feasible),
            "servo_angles": None if self.servo_angles is None else list(self.servo_angles),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            int(d["target_index"]),
            np.array(d["surface_point"]),
            np.array(d["surface_normal"]),
            np.array(d["probe_point"]),
            np.array(d["arm_frame"]).reshape(4, 4),
            PlatformPose.from_vector(d["stewart_pose"]),
            bool(d["feasible"]),
            None if d.get("servo_angles") is None else tuple(d["servo_angles"]),
        )


@dataclass(frozen=True, eq=False)
class ScanPlan:
    viewpoints: list
    config: PlanConfig
    cloud: object = None
    source_digest: str = ""

    @property
    def feasible_viewpoints(self):
        return [v for v in self.viewpoints if v.feasible]

    @property
    def infeasible_count(self):
        return sum(not v.feasible for v in self.viewpoints)

    def save(self, path):
        """JSON lines: a header line with the config, then one viewpoint per line."""
        header = {
            "kind": "scan_plan",
            "config": self.config.to_dict(),
            "source_digest": self.source_digest,
            "downsampled_points": None if self.cloud is None else self.cloud.points.tolist(),
            "downsampled_normals": None
            if self.cloud is None or self.cloud.normals is None
            else self.cloud.normals.tolist(),
        }
        lines = [json.dumps(header)]
        lines += [json.dumps({"kind": "viewpoint", **v.to_dict()}) for v in self.viewpoints]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path):
        rows = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
        if not rows or rows[0].get("kind") != "scan_plan":
            raise ValueError(f"{path}: missing scan_plan header line")
        head = rows[0]
        cloud = None
        if head.get("downsampled_points") is not None:
            cloud = SpectralCloud(np.array(head["downsampled_points"]), head.get("downsampled_normals"))
        vps = [Viewpoint.from_dict(r) for r in rows[1:]]
        return cls(vps, PlanConfig.from_dict(head["config"]), cloud, head.get("source_digest", ""))


def cloud_digest(cloud):
    return hashlib.sha256(np.ascontiguousarray(cloud.points).tobytes()).hexdigest()[:16]


def _tour(points):
    """Greedy nearest-neighbour order starting from the first point."""
    n = len(points)
    if n == 0:
        return []
    left = np.ones(n, dtype=bool)
    order = [0]
    left[0] = False
    for _ in range(n - 1):
        d = np.linalg.norm(points - points[order[-1]], axis=1)
        d[~left] = np.inf
        j = int(np.argmin(d))
        order.append(j)
        left[j] = False
    return order


def _normals_for(cloud, ds, cfg):
    if cfg.normal_source == "given":
        if ds.normals is None:
            raise ValueError("normal_source='given' needs a cloud with normals")
        return ds
    if cfg.normal_source == "full":
        k = min(cfg.normal_k, len(cloud))
        with_n = estimate_normals(cloud, k=k, viewpoint=cfg.sensor_origin)
        return voxel_downsample(with_n, cfg.voxel_size)
    k = min(cfg.normal_k, len(ds))
    return estimate_normals(ds, k=k, viewpoint=cfg.sensor_origin)


def plan_viewpoints(cloud, cfg=None, geom=None):
    """Plan one probe placement per occupied voxel of ``cloud``.

    Infeasible placements stay in the plan with ``feasible=False`` so callers
    can report them; executors skip them.

    Raises:
        EmptyCloud: the input cloud has no points.
    """
    cfg = cfg or PlanConfig()
    geom = geom or PlatformGeometry()
    if len(cloud) == 0:
        raise EmptyCloud("cannot plan over an empty cloud")
    ds = voxel_downsample(cloud, cfg.voxel_size)
    if cfg.normal_source != "given" and len(ds) < 3 and cfg.normal_source == "downsampled":
        raise EmptyCloud(f"only {len(ds)} occupied voxels; need 3 for normals")
    ds = _normals_for(cloud, ds, cfg)

    R_arm = cfg.arm_rotation
    offset = np.asarray(cfg.arm_offset)
    C = cfg.camera_to_base
    t_stew = -R_arm.T @ offset
    vps = []
    for i, (p, n) in enumerate(zip(ds.points, ds.normals)):
        n = n / np.linalg.norm(n)
        probe = p + cfg.scan_dist * n
        arm_point = probe + offset
        R_stew = rotation_between([0.0, 0.0, 1.0], R_arm.T @ n)
        pose = PlatformPose.from_matrix(make_frame(R_stew, t_stew))
        angles = check_feasible(pose, cfg, geom)
        arm = C @ make_frame(R_arm, arm_point)
        vps.append(
            Viewpoint(
                i, p.copy(), n, probe, arm, pose,
                feasible=angles is not None,
                servo_angles=None if angles is None else angles.alpha,
            )
        )
    if cfg.order == "tour":
        vps = [vps[j] for j in _tour(np.array([v.probe_point for v in vps]))]
    return ScanPlan(vps, cfg, ds, cloud_digest(cloud))


def tof_contacts(readings, layout, pose):
    """Contact points hit by each sensor ray along the platform's -z axis."""
    T = pose.matrix if isinstance(pose, PlatformPose) else np.asarray(pose)
    layout = np.asarray(layout, dtype=float)
    mounts = np.column_stack([layout, np.zeros(len(layout))])
    origins = mounts @ T[:3, :3].T + T[:3, 3]
    return origins - np.outer(readings, T[:3, 2])


def normal_match_pose(tof_readings, tof_layout, current, target_offset, max_range=TOF_RANGE):
    """Re-aim the platform square to the surface seen by three ToF sensors.

    The three readings are cast along the current platform -z axis to get
    contact points; the plane through them defines the surface normal
    (oriented toward the platform). The new platform z axis is that normal,
    reached by the smallest rotation from the current one, and the probe
    tip moves onto the normal through the point where the current probe axis
    meets the plane, at ``target_offset`` from it.

    Raises:
        OutOfRange: a reading is not positive or not below ``max_range``.
        DegenerateContacts: the contact points are (nearly) collinear.
    """
    d = np.asarray(tof_readings, dtype=float)
    if d.shape != (3,):
        raise ValueError("expected three ToF readings")
    if np.any(d <= 0) or np.any(d >= max_range):
        raise OutOfRange(f"readings {d.tolist()} outside (0, {max_range})")
    layout = np.asarray(tof_layout, dtype=float)
    T = current.matrix
    c = tof_contacts(d, layout, T)
    n = np.cross(c[1] - c[0], c[2] - c[0])
    span = max(np.linalg.norm(c[1] - c[0]), np.linalg.norm(c[2] - c[0]), 1e-300)
    if np.linalg.norm(n) <= 1e-9 * span**2:
        raise DegenerateContacts("ToF contact points are collinear or coincident")
    n /= np.linalg.norm(n)
    z = T[:3, 2]
    if n @ z < 0:
        n = -n
    o = T[:3, 3]
    # where the current probe axis meets the contact plane
    s = (n @ (c[0] - o)) / (n @ -z)
    hit = o - s * z
    R_new = rotation_between(z, n) @ T[:3, :3]
    return PlatformPose.from_matrix(make_frame(R_new, hit + target_offset * n))
