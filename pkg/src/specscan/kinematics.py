"""Rotary-servo Stewart platform kinematics.

Closed-form inverse kinematics for six horn/arm legs, a damped least-squares
forward kinematics solver used as an independent check, and the position and
orientation error metrics used to score pose tracking.

Conventions: lengths in meters, angles in radians. The platform rotation is
``R = Rz(psi) @ Ry(theta) @ Rx(phi)``. Horn ``i`` swings in the vertical plane
whose horizontal direction makes angle ``beta_i`` with the base x axis, so the
horn tip sits at ``B_i + l_h * (cos a cos b, cos a sin b, sin a)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import EmptyInput, LengthMismatch, NoConvergence, Unreachable, ZeroNorm

N_LEGS = 6


def rot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_matrix(psi, theta, phi):
    return rot_z(psi) @ rot_y(theta) @ rot_x(phi)


def matrix_to_euler(R):
    """Inverse of :func:`euler_to_matrix`, returning ``(psi, theta, phi)``."""
    phi, theta, psi = Rotation.from_matrix(np.asarray(R, dtype=float)).as_euler("xyz")
    return float(psi), float(theta), float(phi)


def anchor_angles(theta_b, theta_p):
    """Polar angles of the six base and six platform anchors.

    Base anchors come in three pairs centred at 0, 120 and 240 degrees and
    split by ``theta_b``; each leg reaches to a platform anchor from the
    pairs centred 60 degrees away, split by ``theta_p``. Legs ``2k`` and
    ``2k+1`` are mirror images of each other.
    """
    base, plat = [], []
    for k in range(3):
        g = 2.0 * math.pi * k / 3.0
        base += [g - theta_b / 2.0, g + theta_b / 2.0]
        plat += [g - math.pi / 3.0 + theta_p / 2.0, g + math.pi / 3.0 - theta_p / 2.0]
    return np.array(base), np.array(plat)


def default_beta(theta_b):
    """Horn plane angles: tangential, mirrored within each pair."""
    base, _ = anchor_angles(theta_b, 0.0)
    signs = np.array([-1.0, 1.0] * 3)
    return base + signs * math.pi / 2.0


@dataclass(frozen=True)
class PlatformGeometry:
    """Fixed parameters of the platform.

    Anchors are generated from the radii and pair angles; only the generating
    parameters are stored so the object round-trips through JSON exactly.
    """

    horn_length: float = 0.02
    arm_length: float = 0.08
    base_radius: float = 0.05
    platform_radius: float = 0.04
    theta_b: float = 0.3
    theta_p: float = 0.3
    beta: tuple = None
    joint_limits: tuple = (-math.pi / 2.0, math.pi / 2.0)

    def __post_init__(self):
        if self.beta is None:
            object.__setattr__(self, "beta", tuple(float(b) for b in default_beta(self.theta_b)))
        else:
            object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(self, "joint_limits", tuple(float(j) for j in self.joint_limits))
        problems = self.validate()
        if problems:
            raise ValueError("; ".join(problems))

    def validate(self):
        problems = []
        if not self.horn_length > 0:
            problems.append("horn_length_m must be positive")
        if not self.arm_length > 0:
            problems.append("arm_length_m must be positive")
        if not self.arm_length > self.horn_length:
            problems.append("arm_length_m must exceed horn_length_m")
        if not (self.base_radius > 0 and self.platform_radius > 0):
            problems.append("base_radius_m and platform_radius_m must be positive")
        if len(self.beta) != N_LEGS:
            problems.append(f"beta_rad needs {N_LEGS} entries, got {len(self.beta)}")
        if len(self.joint_limits) != 2 or not self.joint_limits[0] < self.joint_limits[1]:
            problems.append("joint_limits_rad must be [low, high] with low < high")
        return problems

    @property
    def base_anchors(self):
        a, _ = anchor_angles(self.theta_b, self.theta_p)
        return self.base_radius * np.column_stack([np.cos(a), np.sin(a), np.zeros(N_LEGS)])

    @property
    def platform_anchors(self):
        _, a = anchor_angles(self.theta_b, self.theta_p)
        return self.platform_radius * np.column_stack([np.cos(a), np.sin(a), np.zeros(N_LEGS)])

    @property
    def beta_array(self):
        return np.asarray(self.beta)

    def horn_tips(self, angles):
        """Horn tip positions in the base frame for servo angles ``angles``."""
        a = np.asarray(angles, dtype=float)
        b = self.beta_array
        d = np.column_stack([np.cos(a) * np.cos(b), np.cos(a) * np.sin(b), np.sin(a)])
        return self.base_anchors + self.horn_length * d

    def vertical_stroke(self, samples=1201):
        """Lowest and highest reachable platform heights with zero rotation."""
        top = self.arm_length + self.horn_length
        zs = np.linspace(0.0, top, samples)
        ok = np.array([is_reachable(self, PlatformPose((0.0, 0.0, z))) for z in zs])
        if not ok.any():
            raise ValueError("geometry has no reachable level pose")
        idx = np.flatnonzero(ok)

        def edge(inside, outside):
            for _ in range(60):
                mid = 0.5 * (inside + outside)
                if is_reachable(self, PlatformPose((0.0, 0.0, mid))):
                    inside = mid
                else:
                    outside = mid
            return inside

        lo = zs[idx[0]] if idx[0] == 0 else edge(zs[idx[0]], zs[idx[0] - 1])
        hi = zs[idx[-1]] if idx[-1] == samples - 1 else edge(zs[idx[-1]], zs[idx[-1] + 1])
        return float(lo), float(hi)

    @cached_property
    def home_height(self):
        """Neutral platform height: the middle of the level vertical stroke."""
        lo, hi = self.vertical_stroke()
        return 0.5 * (lo + hi)

    def home_pose(self):
        return PlatformPose((0.0, 0.0, self.home_height))

    def to_dict(self):
        return {
            "horn_length_m": self.horn_length,
            "arm_length_m": self.arm_length,
            "base_radius_m": self.base_radius,
            "platform_radius_m": self.platform_radius,
            "theta_b_rad": self.theta_b,
            "theta_p_rad": self.theta_p,
            "beta_rad": list(self.beta),
            "joint_limits_rad": list(self.joint_limits),
        }

    @classmethod
    def from_dict(cls, d):
        kw = {}
        keys = {
            "horn_length_m": "horn_length",
            "arm_length_m": "arm_length",
            "base_radius_m": "base_radius",
            "platform_radius_m": "platform_radius",
            "theta_b_rad": "theta_b",
            "theta_p_rad": "theta_p",
            "beta_rad": "beta",
            "joint_limits_rad": "joint_limits",
        }
        unknown = sorted(set(d) - set(keys))
        if unknown:
            raise ValueError(f"unknown geometry keys: {', '.join(unknown)}")
        for k, attr in keys.items():
            if k in d:
                kw[attr] = d[k]
        return cls(**kw)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class PlatformPose:
    """Top platform pose relative to the base: translation plus ``(psi, theta, phi)``."""

    translation: tuple = (0.0, 0.0, 0.0)
    euler: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "translation", tuple(float(v) for v in self.translation))
        object.__setattr__(self, "euler", tuple(float(v) for v in self.euler))

    @classmethod
    def from_vector(cls, v):
        """Build from ``(x, y, z, psi, theta, phi)``."""
        v = [float(x) for x in v]
        return cls(tuple(v[:3]), tuple(v[3:6]))

    @classmethod
    def from_matrix(cls, T):
        T = np.asarray(T, dtype=float)
        return cls(tuple(T[:3, 3]), matrix_to_euler(T[:3, :3]))

    def as_vector(self):
        return np.array(self.translation + self.euler)

    @property
    def rotation(self):
        return euler_to_matrix(*self.euler)

    @property
    def matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def quaternion(self):
        """Unit quaternion ``(w, x, y, z)``."""
        x, y, z, w = Rotation.from_matrix(self.rotation).as_quat()
        return np.array([w, x, y, z])


@dataclass(frozen=True)
class ServoAngles:
    alpha: tuple = field(default_factory=lambda: (0.0,) * N_LEGS)

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        if len(self.alpha) != N_LEGS:
            raise ValueError(f"expected {N_LEGS} servo angles, got {len(self.alpha)}")
        if not all(math.isfinite(a) for a in self.alpha):
            raise ValueError("servo angles must be finite")

    def as_array(self):
        return np.array(self.alpha)


def leg_vectors(geom, pose):
    """Platform anchors in the base frame and the linear-leg vectors ``q_i - B_i``."""
    q = np.asarray(pose.translation) + geom.platform_anchors @ pose.rotation.T
    return q, q - geom.base_anchors


def stewart_ik(geom, pose, check_limits=True):
    """Servo angles that place the platform at ``pose``.

    Raises:
        Unreachable: a leg cannot close (arcsin argument outside [-1, 1]) or,
            with ``check_limits``, the principal solution breaks a joint limit.
    """
    _, l = leg_vectors(geom, pose)
    b = geom.beta_array
    lh, la = geom.horn_length, geom.arm_length
    A = 2.0 * lh * l[:, 2]
    B = 2.0 * lh * (np.cos(b) * l[:, 0] + np.sin(b) * l[:, 1])
    C = np.einsum("ij,ij->i", l, l) - (la**2 - lh**2)
    norm = np.hypot(A, B)
    ratio = np.divide(C, norm, out=np.full_like(C, np.inf), where=norm > 0)
    for i in range(N_LEGS):
        if abs(ratio[i]) > 1.0 + 1e-12:
            raise Unreachable(i)
    alpha = np.arcsin(np.clip(ratio, -1.0, 1.0)) - np.arctan2(B, A)
    alpha = (alpha + math.pi) % (2.0 * math.pi) - math.pi
    if check_limits:
        lo, hi = geom.joint_limits
        for i in range(N_LEGS):
            if not lo <= alpha[i] <= hi:
                raise Unreachable(i, f"leg {i} angle {alpha[i]:.4f} rad outside joint limits")
    return ServoAngles(tuple(alpha))


def is_reachable(geom, pose):
    try:
        stewart_ik(geom, pose)
    except Unreachable:
        return False
    return True


def closure_residual(geom, pose, angles):
    """Per-leg arm length error ``|q_i - horn_tip_i| - l_a`` in meters."""
    q, _ = leg_vectors(geom, pose)
    tips = geom.horn_tips(np.asarray(getattr(angles, "alpha", angles)))
    return np.linalg.norm(q - tips, axis=1) - geom.arm_length


def _rotation_partials(psi, theta, phi):
    Rz, Ry, Rx = rot_z(psi), rot_y(theta), rot_x(phi)
    dz = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]) @ Rz
    dy = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]) @ Ry
    dx = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]]) @ Rx
    return dz @ Ry @ Rx, Rz @ dy @ Rx, Rz @ Ry @ dx


def forward_kinematics(geom, angles, initial_guess=None, max_iter=200, tol=1e-10):
    """Platform pose that closes every leg for the given servo angles.

    Levenberg-Marquardt on the smooth residual
    ``(|q_i - tip_i|^2 - l_a^2) / (2 l_a)``, which matches the arm length error
    to first order. A converged pose is accepted only if the inverse solution
    reproduces ``angles``; otherwise the angles lie off the principal branch
    or outside the workspace.

    Raises:
        NoConvergence: residual norm still above ``tol`` after ``max_iter``
            iterations, or the converged pose does not invert back.
    """
    alpha = np.asarray(getattr(angles, "alpha", angles), dtype=float)
    if initial_guess is None:
        initial_guess = geom.home_pose()
    tips = geom.horn_tips(alpha)
    P = geom.platform_anchors
    la = geom.arm_length

    def residual_and_jacobian(x):
        R = euler_to_matrix(x[3], x[4], x[5])
        q = x[:3] + P @ R.T
        diff = q - tips
        r = (np.einsum("ij,ij->i", diff, diff) - la**2) / (2.0 * la)
        J = np.empty((N_LEGS, 6))
        J[:, :3] = diff / la
        for k, dR in enumerate(_rotation_partials(x[3], x[4], x[5])):
            J[:, 3 + k] = np.einsum("ij,ij->i", diff, P @ dR.T) / la
        return r, J

    x = initial_guess.as_vector().astype(float)
    r, J = residual_and_jacobian(x)
    cost = r @ r
    lam = 1e-3
    for _ in range(max_iter):
        if math.sqrt(cost) < tol:
            break
        JtJ = J.T @ J
        g = J.T @ r
        step = np.linalg.solve(JtJ + lam * np.diag(np.diag(JtJ) + 1e-12), -g)
        x_new = x + step
        r_new, J_new = residual_and_jacobian(x_new)
        cost_new = r_new @ r_new
        if cost_new < cost:
            x, r, J, cost = x_new, r_new, J_new, cost_new
            lam = max(lam / 10.0, 1e-12)
        else:
            lam *= 10.0
            if lam > 1e12:
                break
    if not math.sqrt(cost) < tol:
        raise NoConvergence(f"leg closure residual {math.sqrt(cost):.3e} m above {tol:.0e}")
    x[3:] = (x[3:] + math.pi) % (2.0 * math.pi) - math.pi
    pose = PlatformPose.from_vector(x)
    try:
        back = stewart_ik(geom, pose, check_limits=False).as_array()
    except Unreachable as exc:
        raise NoConvergence(f"converged pose is outside the workspace (leg {exc.leg_index})") from exc
    wrapped = (back - alpha + math.pi) % (2.0 * math.pi) - math.pi
    if np.max(np.abs(wrapped)) > 1e-8:
        raise NoConvergence("converged pose lies on a different servo branch")
    return pose


def pose_rmse(observed, commanded):
    """Root mean squared Euclidean distance between paired 3D points."""
    a = np.asarray(observed, dtype=float).reshape(-1, 3)
    b = np.asarray(commanded, dtype=float).reshape(-1, 3)
    if len(a) != len(b):
        raise LengthMismatch(f"{len(a)} observed vs {len(b)} commanded points")
    if len(a) == 0:
        raise EmptyInput("no samples")
    return float(np.sqrt(np.sum((a - b) ** 2) / len(a)))


def _unit_quat(q):
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n < 1e-9:
        raise ZeroNorm("quaternion has zero norm")
    return q / n


def quat_error(q1, q2):
    """Rotation error ``arccos(|q1 . q2|)`` for one pair, in [0, pi/2]."""
    d = abs(float(np.dot(_unit_quat(q1), _unit_quat(q2))))
    return float(math.acos(min(d, 1.0)))


def mean_quat_error(q1s, q2s):
    """Mean of :func:`quat_error` over paired samples."""
    q1s, q2s = list(q1s), list(q2s)
    if len(q1s) != len(q2s):
        raise LengthMismatch(f"{len(q1s)} vs {len(q2s)} quaternions")
    if not q1s:
        raise EmptyInput("no samples")
    return float(np.mean([quat_error(a, b) for a, b in zip(q1s, q2s)]))
