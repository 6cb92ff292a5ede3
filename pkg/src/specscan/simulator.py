"""Synthetic scenes and closed-loop scan execution.

A scene is a sampled analytic surface whose points each carry one material
with a known reflectance curve. ``run_scan`` executes a plan against it: it
simulates the three ToF sensors, optionally re-aims the platform from their
readings, forms the observed spectrum from the points inside the acceptance
cone, and writes it back onto the cloud.

Model assumptions, none of which come from measured optics:

* the observed spectrum is a weighted mean of the ground-truth spectra inside
  the cone, each weighted by the cosine of its off-axis angle times
  ``(d / r)**2`` (nominal standoff over distance from the fibre tip);
* occlusion is ignored, every point inside the cone contributes;
* ToF sensors report the smallest boresight distance of any point in their
  9 degree field of view.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from . import cloudio
from .errors import DegenerateContacts, NoOverlap, OutOfRange, PlanSceneMismatch, UnknownMaterial
from .kinematics import PlatformGeometry, PlatformPose
from .planning import (
    TOF_RANGE,
    check_feasible,
    cloud_digest,
    default_tof_layout,
    make_frame,
    normal_match_pose,
    rotation_between,
    tof_contacts,
)
from .pointcloud import SpectralCloud
from .spectral import AcceptanceCone, EmptyIntersectionWarning, Instrument, associate_spectrum, sam_rows

MODES = ("prospect", "gantry_3axis", "no_rotation")

# (baseline, [(amplitude, centre nm, width nm), ...])
_MATERIAL_SHAPES = {
    "spectralon": (0.99, []),
    "white": (0.85, [(0.05, 900.0, 200.0)]),
    "black": (0.04, [(0.02, 1000.0, 150.0)]),
    "gray": (0.35, [(0.03, 800.0, 200.0)]),
    "red": (0.06, [(0.55, 700.0, 60.0), (0.45, 950.0, 220.0)]),
    "green": (0.05, [(0.40, 540.0, 35.0), (0.30, 1000.0, 180.0)]),
    "blue": (0.05, [(0.35, 500.0, 30.0), (0.25, 1050.0, 150.0)]),
    "yellow": (0.08, [(0.70, 640.0, 90.0), (0.50, 950.0, 200.0)]),
    "orange": (0.06, [(0.60, 660.0, 55.0), (0.40, 920.0, 200.0)]),
    "purple": (0.06, [(0.25, 510.0, 30.0), (0.35, 760.0, 60.0), (0.30, 1050.0, 120.0)]),
    "cyan": (0.08, [(0.45, 520.0, 50.0), (0.15, 900.0, 200.0)]),
    "magenta": (0.07, [(0.30, 500.0, 25.0), (0.55, 740.0, 70.0)]),
    "sandstone": (0.25, [(0.20, 750.0, 120.0), (0.12, 1000.0, 150.0), (-0.06, 900.0, 30.0)]),
    "gypsum": (0.80, [(-0.10, 1000.0, 60.0), (0.05, 700.0, 200.0)]),
    "iron_oxide": (0.12, [(0.35, 760.0, 80.0), (-0.05, 880.0, 60.0), (0.25, 1080.0, 120.0)]),
}

CHECKER_SEQUENCE = ["red", "green", "blue", "yellow", "white", "black", "orange", "purple", "cyan", "magenta", "gray", "sandstone"]


def material_spectrum(name, wavelengths):
    """Synthetic Gaussian-mixture reflectance curve for a named material."""
    if name not in _MATERIAL_SHAPES:
        raise UnknownMaterial(f"unknown material {name!r}")
    base, bumps = _MATERIAL_SHAPES[name]
    wl = np.asarray(wavelengths, dtype=float)
    r = np.full(len(wl), base)
    for amp, mu, sigma in bumps:
        r += amp * np.exp(-0.5 * ((wl - mu) / sigma) ** 2)
    return np.clip(r, 0.005, 1.2)


def builtin_materials():
    return sorted(_MATERIAL_SHAPES)


@dataclass(frozen=True, eq=False)
class Scene:
    """Sampled surface with one ground-truth material per point."""

    cloud: SpectralCloud
    material_ids: np.ndarray
    material_names: list
    library: np.ndarray
    wavelengths: np.ndarray
    kind: str
    spec: dict = field(default_factory=dict)

    @property
    def ground_truth(self):
        return self.library[self.material_ids]

    def materials(self):
        return {n: self.library[i] for i, n in enumerate(self.material_names)}

    def truth_cloud(self):
        n = len(self.cloud)
        return replace(
            self.cloud, spectra=self.ground_truth, wavelengths=self.wavelengths, hits=np.ones(n, dtype=int)
        )

    @cached_property
    def tree(self):
        return cKDTree(self.cloud.points)

    def near(self, centre, radius):
        """Indices of scene points within ``radius`` of ``centre`` (sorted)."""
        return np.sort(np.asarray(self.tree.query_ball_point(centre, radius), dtype=int))


def _resolve_library(names, wavelengths, custom):
    lib = []
    for n in names:
        if custom and n in custom:
            lib.append(np.asarray(custom[n], dtype=float))
        elif "~" in n:
            a, rest = n.split("~", 1)
            b, w = rest.rsplit("@", 1)
            w = float(w)
            lib.append((1.0 - w) * _lookup(a, wavelengths, custom) + w * _lookup(b, wavelengths, custom))
        else:
            lib.append(material_spectrum(n, wavelengths))
    return np.array(lib).reshape(len(names), len(wavelengths))


def _lookup(name, wavelengths, custom):
    if custom and name in custom:
        return np.asarray(custom[name], dtype=float)
    return material_spectrum(name, wavelengths)


def _poisson_count(rng, area, density):
    return max(int(rng.poisson(area * density)), 1)


def _sample_rect(rng, w, h, density, sampling):
    if sampling == "grid":
        step = 1.0 / math.sqrt(density)
        nx, ny = max(int(round(w / step)), 1), max(int(round(h / step)), 1)
        xs = (np.arange(nx) + 0.5) * (w / nx) - w / 2.0
        ys = (np.arange(ny) + 0.5) * (h / ny) - h / 2.0
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])
    n = _poisson_count(rng, w * h, density)
    return np.column_stack([rng.uniform(-w / 2.0, w / 2.0, n), rng.uniform(-h / 2.0, h / 2.0, n)])


def _sample_cap(rng, radius, polar_max, density, sampling):
    """Points on a spherical cap (polar angle <= polar_max) around +z."""
    area = 2.0 * math.pi * radius**2 * (1.0 - math.cos(polar_max))
    if sampling == "grid":
        # Fibonacci lattice restricted to the cap
        n = max(int(round(area * density)), 1)
        k = np.arange(n) + 0.5
        cos_t = 1.0 - (1.0 - math.cos(polar_max)) * k / n
        phi = math.pi * (3.0 - math.sqrt(5.0)) * k
    else:
        n = _poisson_count(rng, area, density)
        cos_t = rng.uniform(math.cos(polar_max), 1.0, n)
        phi = rng.uniform(0.0, 2.0 * math.pi, n)
    sin_t = np.sqrt(np.clip(1.0 - cos_t**2, 0.0, None))
    u = np.column_stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t])
    return u


def _sample_mesh(rng, verts, faces, density):
    tri = verts[faces]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    n = _poisson_count(rng, areas.sum(), density)
    pick = rng.choice(len(faces), n, p=areas / areas.sum())
    r1, r2 = rng.random(n), rng.random(n)
    s = np.sqrt(r1)
    t = tri[pick]
    pts = (1 - s)[:, None] * t[:, 0] + (s * (1 - r2))[:, None] * t[:, 1] + (s * r2)[:, None] * t[:, 2]
    normals = cross[pick] / np.maximum(np.linalg.norm(cross[pick], axis=1, keepdims=True), 1e-300)
    return pts, normals


def _read_obj(path):
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "v":
            verts.append([float(x) for x in tok[1:4]])
        elif tok[0] == "f":
            idx = [int(x.split("/")[0]) - 1 for x in tok[1:]]
            faces += [(idx[0], idx[j], idx[j + 1]) for j in range(1, len(idx) - 1)]
    return np.array(verts), np.array(faces, dtype=int)


def make_scene(kind, params=None, materials=None, density=1e5, seed=0, instrument=None, sampling="random"):
    """Sample a synthetic scene.

    Args:
        kind: ``"plane"``, ``"checkerboard"``, ``"sphere"`` or ``"mesh"``.
        params: geometry parameters; see the README for the keys per kind.
        materials: optional ``{name: reflectance array}`` overriding or
            extending the built-in material curves.
        density: points per square meter.
        sampling: ``"random"`` (Poisson count, uniform positions) or
            ``"grid"`` (regular lattice).

    Raises:
        UnknownMaterial: a referenced material is neither built in nor given.
    """
    if not density > 0:
        raise ValueError("density must be positive")
    params = dict(params or {})
    instrument = instrument or Instrument()
    wl = instrument.wavelengths
    rng = np.random.default_rng(seed)

    if kind == "plane":
        w, h = params.get("size", (0.2, 0.2))
        z = params.get("z", 0.0)
        xy = _sample_rect(rng, w, h, density, sampling)
        pts = np.column_stack([xy, np.full(len(xy), z)])
        normals = np.tile([0.0, 0.0, 1.0], (len(pts), 1))
        names = [params.get("material", "gray")]
        ids = np.zeros(len(pts), dtype=int)
    elif kind == "checkerboard":
        rows, cols = params.get("cells", (4, 6))
        cell = params.get("cell_size", 0.04)
        z = params.get("z", 0.0)
        cell_map = params.get("cell_map")
        if cell_map is None:
            seq = params.get("materials", CHECKER_SEQUENCE)
            cell_map = [[seq[(r * cols + c) % len(seq)] for c in range(cols)] for r in range(rows)]
        xy = _sample_rect(rng, cols * cell, rows * cell, density, sampling)
        pts = np.column_stack([xy, np.full(len(xy), z)])
        normals = np.tile([0.0, 0.0, 1.0], (len(pts), 1))
        c_idx = np.clip(np.floor((xy[:, 0] + cols * cell / 2.0) / cell).astype(int), 0, cols - 1)
        r_idx = np.clip(np.floor((xy[:, 1] + rows * cell / 2.0) / cell).astype(int), 0, rows - 1)
        flat = [n for row in cell_map for n in row]
        names = sorted(set(flat))
        lookup = np.array([[names.index(cell_map[r][c]) for c in range(cols)] for r in range(rows)])
        ids = lookup[r_idx, c_idx]
    elif kind == "sphere":
        radius = params.get("radius", 0.05)
        centre = np.asarray(params.get("center", (0.0, 0.0, 0.0)), dtype=float)
        polar_max = math.radians(params.get("polar_max_deg", 90.0))
        u = _sample_cap(rng, radius, polar_max, density, sampling)
        pts = centre + radius * u
        normals = u
        polar = np.arccos(np.clip(u[:, 2], -1.0, 1.0))
        if "gradient" in params:
            a, b = params["gradient"]
            bands = int(params.get("bands", 16))
            names = [f"{a}~{b}@{k / max(bands - 1, 1):.6f}" for k in range(bands)]
        else:
            names = list(params.get("materials", [params.get("material", "gypsum")]))
            bands = len(names)
        ids = np.clip(np.floor(polar / polar_max * bands).astype(int), 0, bands - 1)
    elif kind == "mesh":
        path = params["path"]
        if str(path).lower().endswith(".obj"):
            verts, faces = _read_obj(path)
        else:
            vcloud, faces = cloudio.read_ply(path)
            verts = vcloud.points
            if faces is None:
                raise ValueError(f"{path}: mesh import needs faces")
        pts, normals = _sample_mesh(rng, verts, faces, density)
        names = [params.get("material", "sandstone")]
        ids = np.zeros(len(pts), dtype=int)
    else:
        raise ValueError(f"unknown scene kind {kind!r}")

    library = _resolve_library(names, wl, materials)
    spec = {
        "kind": kind,
        "params": params,
        "density": density,
        "seed": seed,
        "sampling": sampling,
        "instrument": instrument.to_dict(),
    }
    return Scene(SpectralCloud(pts, normals), ids, names, library, wl, kind, spec)


def scene_from_spec(spec, materials=None):
    """Rebuild a scene from its JSON description."""
    inst = Instrument.from_dict(spec["instrument"]) if "instrument" in spec else None
    return make_scene(
        spec["kind"],
        spec.get("params"),
        materials,
        spec.get("density", 1e5),
        spec.get("seed", 0),
        inst,
        spec.get("sampling", "random"),
    )


@dataclass(frozen=True)
class SimConfig:
    instrument: Instrument = field(default_factory=Instrument)
    tof_radius: float = 0.02
    tof_half_angle_deg: float = 9.0
    tof_range: float = TOF_RANGE
    distance_rule: str = "max"
    weighting: str = "model"
    noise_sigma: float = 0.0
    tof_jitter: float = 0.0
    match_iterations: int = 1
    reducer: str = "mean"
    association: str = "analytic"
    rho: int = 32
    seed: int = 0

    def validate(self):
        problems = []
        if self.distance_rule not in ("max", "mean"):
            problems.append("distance_rule must be 'max' or 'mean'")
        if self.weighting not in ("model", "uniform"):
            problems.append("weighting must be 'model' or 'uniform'")
        if self.noise_sigma < 0 or self.tof_jitter < 0:
            problems.append("noise levels must be non-negative")
        if self.match_iterations < 0:
            problems.append("match_iterations must be non-negative")
        if self.association not in ("analytic", "mesh"):
            problems.append("association must be 'analytic' or 'mesh'")
        return problems

    @property
    def tof_layout(self):
        return default_tof_layout(self.tof_radius)


def simulate_tof(scene, probe_frame, tof_layout=None, half_angle_deg=9.0, max_range=TOF_RANGE, jitter=0.0, rng=None):
    """Readings of the three platform ToF sensors.

    Each sensor looks down the platform -z axis and reports the smallest
    boresight distance of any scene point inside its field of view.

    Returns:
        ``(readings, returned)``; sensors with no point in range report
        ``max_range`` and ``returned`` False.
    """
    T = probe_frame.matrix if isinstance(probe_frame, PlatformPose) else np.asarray(probe_frame, dtype=float)
    layout = default_tof_layout() if tof_layout is None else np.asarray(tof_layout, dtype=float)
    origins = tof_contacts(np.zeros(len(layout)), layout, T)
    axis = -T[:3, 2]
    tan_fov = math.tan(math.radians(half_angle_deg))
    readings = np.full(len(layout), float(max_range))
    returned = np.zeros(len(layout), dtype=bool)
    reach = max_range * math.sqrt(1.0 + tan_fov**2)
    for k, o in enumerate(origins):
        v = scene.cloud.points[scene.near(o, reach)] - o
        a = v @ axis
        near = (a > 0.0) & (a < max_range)
        if not near.any():
            continue
        r = np.linalg.norm(v[near] - a[near, None] * axis, axis=1)
        seen = a[near][r <= a[near] * tan_fov]
        if len(seen):
            readings[k] = float(seen.min())
            returned[k] = True
    if jitter > 0 and rng is not None:
        readings[returned] += rng.normal(0.0, jitter, int(returned.sum()))
    return readings, returned


def observe_spectrum(scene, cone, weighting="model", noise_sigma=0.0, rng=None, return_members=False):
    """Spectrum seen through ``cone``: weighted mean of member truth spectra.

    An empty cone yields a zero spectrum and an :class:`EmptyIntersectionWarning`.
    """
    # every cone point lies within the slant length of the apex
    slant = cone.depth / math.cos(cone.half_angle)
    cand = scene.near(cone.apex, slant * (1.0 + 1e-9) + 1e-12)
    members = cand[cone.contains(scene.cloud.points[cand])]
    if len(members) == 0:
        warnings.warn("acceptance cone intersects no scene points", EmptyIntersectionWarning, stacklevel=2)
        out = np.zeros(len(scene.wavelengths))
        return (out, members) if return_members else out
    if weighting == "uniform":
        w = np.ones(len(members))
    else:
        v = scene.cloud.points[members] - cone.apex
        dist = np.linalg.norm(v, axis=1)
        dist = np.maximum(dist, 1e-9)
        cos_t = np.clip((v @ cone.axis) / dist, 0.0, 1.0)
        w = cos_t * (cone.distance / dist) ** 2
        if w.sum() <= 0:
            w = np.ones(len(members))
    spec = (w / w.sum()) @ scene.ground_truth[members]
    if noise_sigma > 0 and rng is not None:
        spec = spec + rng.normal(0.0, noise_sigma, len(spec))
    return (spec, members) if return_members else spec


@dataclass
class ScanRecord:
    target_index: int
    surface_point: np.ndarray
    probe_frame: np.ndarray
    stewart_pose: list
    tof_readings: list
    tof_returned: list
    n_members: int
    spectrum: np.ndarray | None
    refined: bool = False

    def to_dict(self):
        return {
            "target_index": int(self.target_index),
            "surface_point": [float(v) for v in self.surface_point],
            "probe_frame": [float(v) for v in np.asarray(self.probe_frame).reshape(-1)],
            "stewart_pose": [float(v) for v in self.stewart_pose],
            "tof_readings": [float(v) for v in self.tof_readings],
            "tof_returned": [bool(v) for v in self.tof_returned],
            "n_members": int(self.n_members),
            "refined": bool(self.refined),
            "spectrum": None if self.spectrum is None else [float(v) for v in self.spectrum],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["target_index"],
            np.array(d["surface_point"]),
            np.array(d["probe_frame"]).reshape(4, 4),
            d["stewart_pose"],
            d["tof_readings"],
            d["tof_returned"],
            d["n_members"],
            None if d["spectrum"] is None else np.array(d["spectrum"]),
            d.get("refined", False),
        )


@dataclass
class ScanResult:
    cloud: SpectralCloud
    records: list
    mode: str
    skipped: int = 0
    wavelengths: np.ndarray | None = None

    def observed(self):
        """``{target_index: (surface_point, spectrum)}`` for records that saw points."""
        return {r.target_index: (r.surface_point, r.spectrum) for r in self.records if r.spectrum is not None}

    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        cloudio.write_ply(d / "cloud.ply", self.cloud)
        if self.cloud.spectra is not None:
            cloudio.write_spectra_sidecar(d / "spectra.csv", self.cloud)
        (d / "records.jsonl").write_text("".join(json.dumps(r.to_dict()) + "\n" for r in self.records))
        summary = {
            "mode": self.mode,
            "executed": len(self.records),
            "skipped": self.skipped,
            "observed": len(self.observed()),
            "points_scanned": int(self.cloud.scanned_mask.sum()),
            "wavelengths_nm": None if self.wavelengths is None else [float(x) for x in self.wavelengths],
        }
        (d / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        cloud, _ = cloudio.read_ply(d / "cloud.ply")
        if (d / "spectra.csv").exists():
            cloud = cloudio.read_spectra_sidecar(d / "spectra.csv", cloud)
        records = [ScanRecord.from_dict(json.loads(l)) for l in (d / "records.jsonl").read_text().splitlines() if l]
        summary = json.loads((d / "summary.json").read_text())
        wl = None if summary.get("wavelengths_nm") is None else np.array(summary["wavelengths_nm"])
        return cls(cloud, records, summary["mode"], summary.get("skipped", 0), wl)


def _mode_frame(vp, mode, plan):
    """Probe frame (cloud frame) and arm frame (cloud frame) for a viewpoint under ``mode``."""
    C = plan.config.camera_to_base
    arm_cam = np.linalg.inv(C) @ vp.arm_frame
    if mode == "prospect":
        return arm_cam @ vp.stewart_pose.matrix, arm_cam
    R_arm = arm_cam[:3, :3]
    if mode == "no_rotation":
        return make_frame(R_arm, vp.probe_point), arm_cam
    if mode == "gantry_3axis":
        up = np.asarray(plan.config.up) / np.linalg.norm(plan.config.up)
        probe = vp.surface_point + plan.config.scan_dist * up
        arm = make_frame(R_arm, probe + np.asarray(plan.config.arm_offset))
        return make_frame(R_arm, probe), arm
    raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")


def run_scan(scene, plan, mode="prospect", cfg=None, geom=None):
    """Execute ``plan`` against ``scene`` under one of the scanning strategies.

    ``prospect`` uses the planned platform poses refined by ToF normal
    matching; ``gantry_3axis`` approaches every point straight down from
    above; ``no_rotation`` keeps the planned probe positions with a level
    platform. Viewpoints whose pose leaves the platform workspace are skipped.

    Raises:
        PlanSceneMismatch: the plan was not generated from this scene's cloud.
    """
    cfg = cfg or SimConfig()
    geom = geom or PlatformGeometry()
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if plan.source_digest and plan.source_digest != cloud_digest(scene.cloud):
        raise PlanSceneMismatch("plan was generated from a different point cloud")
    rng = np.random.default_rng(cfg.seed)
    inst = cfg.instrument
    layout = cfg.tof_layout
    out = SpectralCloud(scene.cloud.points, scene.cloud.normals).with_wavelengths(scene.wavelengths)
    records, skipped = [], 0

    def tof(T):
        return simulate_tof(scene, T, layout, cfg.tof_half_angle_deg, cfg.tof_range, cfg.tof_jitter, rng)

    for vp in plan.viewpoints:
        T, arm_cam = _mode_frame(vp, mode, plan)
        rel = PlatformPose.from_matrix(np.linalg.inv(arm_cam) @ T)
        if check_feasible(rel, plan.config, geom) is None:
            skipped += 1
            continue
        refined = False
        if mode == "prospect":
            for _ in range(cfg.match_iterations):
                d, ok = tof(T)
                if not ok.all():
                    break
                try:
                    new = normal_match_pose(d, layout, PlatformPose.from_matrix(T), plan.config.scan_dist, cfg.tof_range)
                except (OutOfRange, DegenerateContacts):
                    break
                new_rel = PlatformPose.from_matrix(np.linalg.inv(arm_cam) @ new.matrix)
                if check_feasible(new_rel, plan.config, geom) is None:
                    break
                T, rel, refined = new.matrix, new_rel, True
        d, ok = tof(T)
        dist = float(d.max()) if cfg.distance_rule == "max" else float(d.mean())
        cone = AcceptanceCone.from_frame(T, inst.numerical_aperture, dist, inst.epsilon)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EmptyIntersectionWarning)
            spec, members = observe_spectrum(scene, cone, cfg.weighting, cfg.noise_sigma, rng, return_members=True)
            if len(members):
                out, _ = associate_spectrum(out, cone, spec, cfg.reducer, cfg.association, cfg.rho)
        records.append(
            ScanRecord(
                vp.target_index,
                vp.surface_point,
                T,
                list(rel.translation + rel.euler),
                list(d),
                list(ok),
                len(members),
                spec if len(members) else None,
                refined,
            )
        )
    return ScanResult(out, records, mode, skipped, scene.wavelengths)


def ground_truth_scan(scene, plan):
    """Reference result: each target's true spectrum (nearest scene point)."""
    tree = scene.tree
    truth = scene.ground_truth
    records = []
    for vp in plan.viewpoints:
        _, j = tree.query(vp.surface_point)
        records.append(
            ScanRecord(vp.target_index, vp.surface_point, np.eye(4), [0.0] * 6, [], [], 1, truth[j].copy())
        )
    return ScanResult(scene.truth_cloud(), records, "ground_truth", 0, scene.wavelengths)


@dataclass
class Comparison:
    target_indices: np.ndarray
    points: np.ndarray
    sam: np.ndarray
    only_in_a: int
    only_in_b: int

    @property
    def summary(self):
        return {
            "count": int(len(self.sam)),
            "mean": float(np.mean(self.sam)),
            "std": float(np.std(self.sam)),
            "range": float(np.ptp(self.sam)),
            "min": float(np.min(self.sam)),
            "max": float(np.max(self.sam)),
            "only_in_a": self.only_in_a,
            "only_in_b": self.only_in_b,
        }

    def write_csv(self, path):
        lines = ["point_index,x,y,z,sam"]
        for i, p, s in zip(self.target_indices, self.points, self.sam):
            lines.append(f"{int(i)},{p[0]!r},{p[1]!r},{p[2]!r},{float(s)!r}")
        Path(path).write_text("\n".join(lines) + "\n")


def compare_scans(a, b):
    """Per-target SAM between two results over the targets both observed.

    Raises:
        NoOverlap: the results share no observed target.
    """
    oa, ob = a.observed(), b.observed()
    common = sorted(set(oa) & set(ob))
    if not common:
        raise NoOverlap("the two scans observed no common target")
    pts = np.array([oa[i][0] for i in common])
    sa = np.array([oa[i][1] for i in common])
    sb = np.array([ob[i][1] for i in common])
    return Comparison(np.array(common), pts, sam_rows(sa, sb), len(oa) - len(common), len(ob) - len(common))


def probe_frame_over(point, normal, distance):
    """Probe frame looking down ``-normal`` at ``distance`` above ``point``."""
    n = np.asarray(normal, dtype=float) / np.linalg.norm(normal)
    return make_frame(rotation_between([0.0, 0.0, 1.0], n), np.asarray(point) + distance * n)


def perturb_frame(T, raise_by=0.0, tilt_deg=0.0, tilt_axis=(1.0, 0.0, 0.0)):
    """Lift a probe frame along world z and tilt it about its own tip."""
    T = np.array(T, dtype=float)
    axis = np.asarray(tilt_axis, dtype=float) / np.linalg.norm(tilt_axis)
    R = Rotation.from_rotvec(math.radians(tilt_deg) * axis).as_matrix()
    T[:3, :3] = R @ T[:3, :3]
    T[2, 3] += raise_by
    return T


def observe_at(scene, T, cfg=None):
    """ToF readings, cone and observed spectrum for a probe frame, as in ``run_scan``."""
    cfg = cfg or SimConfig()
    d, ok = simulate_tof(scene, T, cfg.tof_layout, cfg.tof_half_angle_deg, cfg.tof_range)
    dist = float(d.max()) if cfg.distance_rule == "max" else float(d.mean())
    cone = AcceptanceCone.from_frame(T, cfg.instrument.numerical_aperture, dist, cfg.instrument.epsilon)
    return observe_spectrum(scene, cone, cfg.weighting), cone, d
