import dataclasses
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specscan.errors import NoOverlap, PlanSceneMismatch, UnknownMaterial
from specscan.kinematics import rot_x
from specscan.planning import PlanConfig, ScanPlan, default_tof_layout, make_frame, plan_viewpoints, tof_contacts
from specscan.simulator import (
    MODES,
    ScanResult,
    SimConfig,
    builtin_materials,
    material_spectrum,
    compare_scans,
    ground_truth_scan,
    make_scene,
    observe_at,
    observe_spectrum,
    perturb_frame,
    probe_frame_over,
    run_scan,
    scene_from_spec,
    simulate_tof,
)
from specscan.spectral import AcceptanceCone, EmptyIntersectionWarning, Instrument, sam_score

SMALL = Instrument(bins=32)


def tilted(scene, angle_rad):
    return dataclasses.replace(scene, cloud=scene.cloud.transformed(make_frame(rot_x(angle_rad))))


# ---- scenes ----------------------------------------------------------------------


def test_plane_density():
    scene = make_scene("plane", {"size": (0.2, 0.2)}, density=1e5, seed=3, instrument=SMALL)
    assert abs(len(scene.cloud) - 4000) < 4 * math.sqrt(4000)
    assert set(scene.material_ids.tolist()) == {0}


def test_checkerboard_cells_respected():
    scene = make_scene("checkerboard", {"cells": (4, 6), "cell_size": 0.04}, density=5e4, instrument=SMALL)
    pts = scene.cloud.points
    col = np.floor((pts[:, 0] + 0.12) / 0.04).astype(int)
    row = np.floor((pts[:, 1] + 0.08) / 0.04).astype(int)
    for r in range(4):
        for c in range(6):
            ids = scene.material_ids[(row == r) & (col == c)]
            assert len(set(ids.tolist())) == 1
    names = [scene.material_names[i] for i in scene.material_ids]
    assert len(set(names)) == 12


def test_sphere_radius_exact():
    scene = make_scene("sphere", {"radius": 0.05, "center": (0.1, 0, 0.2)}, density=2e5, instrument=SMALL)
    r = np.linalg.norm(scene.cloud.points - [0.1, 0, 0.2], axis=1)
    np.testing.assert_allclose(r, 0.05, atol=1e-9)


def test_unknown_material():
    with pytest.raises(UnknownMaterial):
        make_scene("plane", {"material": "unobtainium"}, instrument=SMALL)


def test_custom_material_and_blend():
    wl = SMALL.wavelengths
    custom = {"flat": np.full(len(wl), 0.4)}
    scene = make_scene("plane", {"material": "flat~white@0.25"}, materials=custom, density=1e4, instrument=SMALL)
    expected = 0.75 * custom["flat"] + 0.25 * material_spectrum("white", wl)
    np.testing.assert_allclose(scene.library[0], expected, rtol=1e-15)
    assert "white" in builtin_materials()


def test_material_curves_are_plausible_reflectances():
    wl = Instrument().wavelengths
    scene = make_scene("checkerboard", {}, density=2e4)
    assert scene.library.shape[1] == len(wl)
    assert np.all(scene.library >= 0) and np.all(scene.library <= 1.2)


def test_mesh_import(tmp_path):
    obj = tmp_path / "tri.obj"
    obj.write_text("v 0 0 0\nv 0.1 0 0\nv 0 0.1 0\nf 1 2 3\n")
    scene = make_scene("mesh", {"path": str(obj)}, density=2e5, instrument=SMALL)
    p = scene.cloud.points
    assert np.all(p[:, 0] >= -1e-12) and np.all(p[:, 1] >= -1e-12) and np.all(p[:, 0] + p[:, 1] <= 0.1 + 1e-12)
    np.testing.assert_allclose(np.abs(scene.cloud.normals[:, 2]), 1.0)


def test_scene_spec_rebuilds_identically():
    a = make_scene("sphere", {"radius": 0.05, "gradient": ["gypsum", "iron_oxide"]}, density=1e5, seed=9, instrument=SMALL)
    b = scene_from_spec(a.spec)
    np.testing.assert_array_equal(a.cloud.points, b.cloud.points)
    np.testing.assert_array_equal(a.ground_truth, b.ground_truth)


# ---- ToF -----------------------------------------------------------------------------


def test_tof_flat_plane():
    scene = make_scene("plane", {"size": (0.2, 0.2)}, density=1e6, sampling="grid", instrument=SMALL)
    d, ok = simulate_tof(scene, probe_frame_over([0, 0, 0], [0, 0, 1], 0.03))
    assert ok.all()
    np.testing.assert_allclose(d, 0.03, atol=1e-12)


def test_tof_tilted_plane_refit():
    scene = tilted(make_scene("plane", {"size": (0.15, 0.15)}, density=2e6, seed=1, instrument=SMALL), math.radians(10))
    T = probe_frame_over([0, 0, 0], [0, 0, 1], 0.03)
    d, ok = simulate_tof(scene, T)
    assert ok.all() and np.ptp(d) > 1e-3
    c = tof_contacts(d, default_tof_layout(), T)
    n = np.cross(c[1] - c[0], c[2] - c[0])
    n /= np.linalg.norm(n)
    tilt = math.degrees(math.acos(abs(n[2])))
    assert tilt == pytest.approx(10.0, abs=0.5)


def test_tof_no_return_far_away():
    scene = make_scene("plane", {}, density=1e5, instrument=SMALL)
    d, ok = simulate_tof(scene, probe_frame_over([0, 0, 0], [0, 0, 1], 0.10))
    assert not ok.any()
    np.testing.assert_array_equal(d, 0.06)


# ---- observation model --------------------------------------------------------------------


@pytest.fixture(scope="module")
def board():
    return make_scene("checkerboard", {"cells": (4, 6), "cell_size": 0.04}, density=4e5, sampling="grid", seed=0)


def test_cone_inside_one_cell_gives_reference(board):
    cone = AcceptanceCone.from_na((0.02, 0.02, 0.02), (0, 0, -1), 0.5, 0.02, 0.002)
    obs, members = observe_spectrum(board, cone, return_members=True)
    ref = board.ground_truth[members[0]]
    assert len(set(board.material_ids[members].tolist())) == 1
    np.testing.assert_allclose(obs, ref, rtol=1e-12)


def test_cone_straddling_boundary_gives_midpoint(board):
    cone = AcceptanceCone.from_na((0.0, 0.02, 0.02), (0, 0, -1), 0.5, 0.02, 0.002)
    obs, members = observe_spectrum(board, cone, return_members=True)
    left = board.ground_truth[board.near([-0.02, 0.02, 0], 1e-3)[0]]
    right = board.ground_truth[board.near([0.02, 0.02, 0], 1e-3)[0]]
    mid = (left + right) / 2
    assert np.max(np.abs(obs - mid) / mid) < 0.02


def test_raised_cone_over_boundary_is_worse(board):
    apex = np.array([0.015, 0.02, 0.03])
    aligned = observe_spectrum(board, AcceptanceCone.from_na(apex, (0, 0, -1), 0.5, 0.03, 0.002))
    nominal = board.ground_truth[board.near([0.02, 0.02, 0], 1e-3)[0]]
    raised = observe_spectrum(board, AcceptanceCone.from_na(apex + [0, 0, 0.03], (0, 0, -1), 0.5, 0.06, 0.002))
    assert sam_score(raised, nominal) > sam_score(aligned, nominal)


@settings(max_examples=40, deadline=None)
@given(st.floats(-0.1, 0.1), st.floats(-0.06, 0.06), st.floats(0.01, 0.05), st.sampled_from(["model", "uniform"]))
def test_observation_is_convex_combination(board, x, y, d, weighting):
    cone = AcceptanceCone.from_na((x, y, d), (0, 0, -1), 0.5, d, 0.002)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyIntersectionWarning)
        obs, members = observe_spectrum(board, cone, weighting, return_members=True)
    if len(members) == 0:
        return
    truth = board.ground_truth[members]
    assert np.all(obs >= truth.min(axis=0) - 1e-12)
    assert np.all(obs <= truth.max(axis=0) + 1e-12)


def test_empty_cone_warns(board):
    cone = AcceptanceCone.from_na((1.0, 1.0, 1.0), (0, 0, -1), 0.5, 0.03, 0.002)
    with pytest.warns(EmptyIntersectionWarning):
        obs = observe_spectrum(board, cone)
    assert not obs.any()


def test_perturbation_helpers():
    T = probe_frame_over([0, 0, 0], [0, 0, 1], 0.03)
    up = perturb_frame(T, raise_by=0.012)
    assert up[2, 3] == pytest.approx(0.042)
    tilt = perturb_frame(T, tilt_deg=11)
    assert math.degrees(math.acos(tilt[2, 2])) == pytest.approx(11.0)
    np.testing.assert_array_equal(tilt[:3, 3], T[:3, 3])


# ---- scan execution --------------------------------------------------------------------------


@pytest.fixture(scope="module")
def flat():
    scene = make_scene("plane", {"size": (0.16, 0.16), "material": "sandstone"}, density=3e5, seed=2, instrument=SMALL)
    plan = plan_viewpoints(scene.cloud, PlanConfig(voxel_size=0.04))
    return scene, plan


def test_flat_plane_modes_coincide(flat):
    scene, plan = flat
    results = {m: run_scan(scene, plan, m, SimConfig(instrument=SMALL)) for m in MODES}
    base = results["prospect"]
    assert base.skipped == 0 and len(base.records) == len(plan.viewpoints)
    for m in MODES[1:]:
        other = results[m]
        for ra, rb in zip(base.records, other.records):
            np.testing.assert_allclose(ra.probe_frame, rb.probe_frame, atol=1e-12)
            np.testing.assert_allclose(ra.spectrum, rb.spectrum, atol=1e-12)
        assert compare_scans(base, other).summary["max"] < 1e-6


def test_run_scan_is_deterministic(flat):
    scene, plan = flat
    cfg = SimConfig(instrument=SMALL, noise_sigma=0.01, tof_jitter=1e-4, seed=4)
    a, b = run_scan(scene, plan, "prospect", cfg), run_scan(scene, plan, "prospect", cfg)
    np.testing.assert_array_equal(np.nan_to_num(a.cloud.spectra), np.nan_to_num(b.cloud.spectra))
    for ra, rb in zip(a.records, b.records):
        np.testing.assert_array_equal(ra.spectrum, rb.spectrum)


def test_empty_plan(flat):
    scene, plan = flat
    empty = ScanPlan([], plan.config, None, plan.source_digest)
    result = run_scan(scene, empty, "prospect", SimConfig(instrument=SMALL))
    assert result.records == [] and result.skipped == 0


def test_plan_scene_mismatch(flat):
    scene, plan = flat
    other = make_scene("plane", {"size": (0.16, 0.16)}, density=3e5, seed=99, instrument=SMALL)
    with pytest.raises(PlanSceneMismatch):
        run_scan(other, plan)


def test_unknown_mode(flat):
    scene, plan = flat
    with pytest.raises(ValueError, match="mode"):
        run_scan(scene, plan, "teleport")


def test_result_round_trip(tmp_path, flat):
    scene, plan = flat
    result = run_scan(scene, plan, "prospect", SimConfig(instrument=SMALL))
    result.save(tmp_path / "r")
    back = ScanResult.load(tmp_path / "r")
    assert back.mode == "prospect" and len(back.records) == len(result.records)
    np.testing.assert_array_equal(back.cloud.scanned_mask, result.cloud.scanned_mask)
    np.testing.assert_array_equal(back.records[0].spectrum, result.records[0].spectrum)
    assert compare_scans(result, back).summary["max"] == 0.0


# ---- comparison ---------------------------------------------------------------------------------


def test_compare_self_and_scaled(flat):
    scene, plan = flat
    gt = ground_truth_scan(scene, plan)
    s = compare_scans(gt, gt).summary
    assert s["mean"] == 0 and s["range"] == 0
    scaled = dataclasses.replace(gt, records=[dataclasses.replace(r, spectrum=2 * r.spectrum) for r in gt.records])
    assert compare_scans(gt, scaled).summary["max"] == pytest.approx(0.0, abs=1e-12)


def test_compare_csv_consistent_with_summary(tmp_path, board):
    plan = plan_viewpoints(board.cloud, PlanConfig(voxel_size=0.04))
    a = run_scan(board, plan, "prospect")
    b = ground_truth_scan(board, plan)
    comp = compare_scans(a, b)
    path = tmp_path / "sam.csv"
    comp.write_csv(path)
    rows = path.read_text().splitlines()
    assert rows[0] == "point_index,x,y,z,sam"
    sam = np.array([float(r.split(",")[-1]) for r in rows[1:]])
    s = comp.summary
    assert s["mean"] == pytest.approx(sam.mean(), rel=1e-12)
    assert s["std"] == pytest.approx(sam.std(), rel=1e-12)
    assert s["range"] == pytest.approx(sam.max() - sam.min(), rel=1e-12)


def test_compare_without_overlap(flat):
    scene, plan = flat
    gt = ground_truth_scan(scene, plan)
    empty = dataclasses.replace(gt, records=[])
    with pytest.raises(NoOverlap):
        compare_scans(gt, empty)


def test_observe_at_uses_max_reading(board):
    T = probe_frame_over([0.02, 0.02, 0], [0, 0, 1], 0.03)
    spec, cone, d = observe_at(board, perturb_frame(T, tilt_deg=10), SimConfig())
    assert cone.distance == pytest.approx(d.max())
    mean_cfg = SimConfig(distance_rule="mean")
    _, cone2, d2 = observe_at(board, perturb_frame(T, tilt_deg=10), mean_cfg)
    assert cone2.distance == pytest.approx(d2.mean())


def _axis_error_deg(T, centre, radius):
    """Angle between the probe axis and the sphere normal where that axis meets the sphere."""
    o, d = T[:3, 3] - centre, -T[:3, 2]
    b = o @ d
    disc = b * b - (o @ o - radius**2)
    t = -b - math.sqrt(max(disc, 0.0))
    n = (o + t * d) / radius
    return math.degrees(math.acos(min(1.0, float(-d @ n))))


@pytest.mark.slow
def test_prospect_probe_axis_tracks_sphere_normal():
    R = 0.15
    params = {"radius": R, "gradient": ["gypsum", "iron_oxide"], "bands": 16}
    scene = make_scene("sphere", params, density=3e5, seed=0, instrument=SMALL)
    plan = plan_viewpoints(scene.cloud, PlanConfig(voxel_size=0.03))
    result = run_scan(scene, plan, "prospect", SimConfig(instrument=SMALL))
    assert len(result.records) > 10 and all(r.refined for r in result.records)
    errors = [_axis_error_deg(r.probe_frame, np.zeros(3), R) for r in result.records]
    assert max(errors) < 1.0
