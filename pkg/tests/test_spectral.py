import math
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from specscan.errors import EmptyInput, LengthMismatch, ZeroNorm
from specscan.pointcloud import SpectralCloud
from specscan.spectral import (
    AcceptanceCone,
    CalibrationPair,
    CalibrationWarning,
    EmptyIntersectionWarning,
    Instrument,
    Spectrum,
    associate_spectrum,
    calibrate_spectrum,
    cone_area,
    median_stack,
    read_spectra_csv,
    sam_score,
    write_spectra_csv,
)

WL = np.linspace(500, 1100, 16)


def spec(values, **kw):
    return Spectrum(np.asarray(values, dtype=float), WL, **kw)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


@pytest.fixture
def refs(rng):
    dark = rng.uniform(100, 200, len(WL))
    white = dark + rng.uniform(1000, 3000, len(WL))
    return spec(white), spec(dark)


# ---- instrument and spectra ------------------------------------------------------


def test_default_instrument_axis():
    inst = Instrument()
    assert len(inst.wavelengths) == 256
    assert inst.wavelengths[0] == 500.0 and inst.wavelengths[-1] == 1100.0
    assert inst.half_angle == pytest.approx(math.pi / 6)


def test_instrument_json_keys():
    inst = Instrument(numerical_aperture=0.22, epsilon=0.001)
    assert set(inst.to_dict()) == {"NA", "bins", "range_nm", "epsilon_m"}
    assert Instrument.from_dict(inst.to_dict()) == inst


def test_spectrum_validates():
    with pytest.raises(LengthMismatch):
        Spectrum([1.0, 2.0], [500.0])
    with pytest.raises(ValueError):
        Spectrum([1.0, 2.0], [600.0, 500.0])
    with pytest.raises(ValueError):
        Spectrum([1.0, np.inf], [500.0, 600.0])


# ---- calibration -------------------------------------------------------------------


def test_calibration_identities(refs):
    white, dark = refs
    cal = CalibrationPair(white, dark)
    np.testing.assert_allclose(calibrate_spectrum(white, cal).values, 1.0, atol=1e-12)
    np.testing.assert_allclose(calibrate_spectrum(dark, cal).values, 0.0, atol=1e-12)
    mid = spec((white.values + dark.values) / 2)
    np.testing.assert_allclose(calibrate_spectrum(mid, cal).values, 0.5, atol=1e-12)


@given(st.floats(-0.5, 1.5))
def test_calibration_is_affine_exact(a):
    rng = np.random.default_rng(1)
    dark = rng.uniform(100, 200, len(WL))
    white = dark + rng.uniform(1000, 3000, len(WL))
    cal = CalibrationPair(spec(white), spec(dark))
    out = calibrate_spectrum(spec(a * white + (1 - a) * dark), cal)
    np.testing.assert_allclose(out.values, a, atol=1e-12)


def test_uncalibratable_bins_are_masked(refs):
    white, dark = refs
    w = white.values.copy()
    w[[2, 5]] = dark.values[[2, 5]]
    cal = CalibrationPair(spec(w), dark)
    with pytest.warns(CalibrationWarning, match="2 bins"):
        out = calibrate_spectrum(white, cal)
    assert not out.valid[2] and not out.valid[5]
    assert out.values[2] == 0.0 and np.all(np.isfinite(out.values))


def test_integration_time_mismatch(refs):
    white, dark = refs
    cal = CalibrationPair(spec(white.values, integration_time=0.1), spec(dark.values, integration_time=0.1))
    with pytest.raises(ValueError, match="integration"):
        calibrate_spectrum(spec(white.values, integration_time=0.2), cal)


def test_median_single_and_outlier():
    s = spec(np.arange(16.0))
    np.testing.assert_array_equal(median_stack([s]).values, s.values)
    stack = [spec(np.full(16, v)) for v in (1.0, 5.0, 100.0)]
    np.testing.assert_array_equal(median_stack(stack).values, 5.0)


def test_median_matches_sorted_middle(rng):
    data = rng.normal(size=(10, 16))
    out = median_stack([spec(r) for r in data]).values
    srt = np.sort(data, axis=0)
    np.testing.assert_allclose(out, (srt[4] + srt[5]) / 2, atol=0)


def test_median_errors():
    with pytest.raises(EmptyInput):
        median_stack([])
    with pytest.raises(LengthMismatch):
        median_stack([spec(np.zeros(16)), Spectrum([1.0], [500.0])])


def test_spectra_csv_round_trip(tmp_path, rng):
    vals = rng.uniform(size=(3, 16))
    path = tmp_path / "s.csv"
    write_spectra_csv(path, WL, ["a", "b", "c"], vals)
    assert path.read_text().startswith("wavelength_nm,")
    wl, labels, back = read_spectra_csv(path)
    np.testing.assert_array_equal(wl, WL)
    assert labels == ["a", "b", "c"]
    np.testing.assert_array_equal(back, vals)


# ---- cone area ---------------------------------------------------------------------


def test_cone_area_nominal():
    mpmath.mp.dps = 40
    ref = mpmath.pi * (mpmath.mpf("0.03") * mpmath.tan(mpmath.asin(mpmath.mpf("0.5")))) ** 2
    assert cone_area(0.5, 0.03) == pytest.approx(float(ref), rel=1e-12)
    assert cone_area(0.5, 0.03) == pytest.approx(9.4248e-4, rel=1e-4)


@given(st.floats(0.01, 0.99), st.floats(1e-3, 1.0))
def test_cone_area_quadratic_in_distance(na, d):
    assert cone_area(na, 2 * d) == pytest.approx(4 * cone_area(na, d), rel=1e-12)


def test_cone_area_vanishes_with_aperture():
    assert cone_area(1e-9, 0.03) < 1e-20
    with pytest.raises(ValueError):
        cone_area(1.0, 0.03)


# ---- cone membership ------------------------------------------------------------------


def brute_contains(cone, points):
    out = []
    for p in points:
        v = p - cone.apex
        a = float(np.dot(v, cone.axis))
        n = float(np.linalg.norm(v))
        if n == 0.0:
            out.append(True)
            continue
        angle = math.acos(max(-1.0, min(1.0, a / n)))
        out.append(0.0 <= a <= cone.depth and angle <= cone.half_angle)
    return np.array(out)


def test_on_axis_point_is_member():
    cone = AcceptanceCone.from_na((0, 0, 0.03), (0, 0, -1), 0.5, 0.03, 0.002)
    assert cone.contains(np.array([[0, 0, 0.01]]))[0]


def test_point_beyond_rim_is_not_member():
    cone = AcceptanceCone.from_na((0, 0, 0), (0, 0, 1), 0.5, 0.03, 0.002)
    r = cone.depth * math.tan(cone.half_angle) + 0.001
    assert not cone.contains(np.array([[r, 0, cone.depth]]))[0]


def test_analytic_matches_brute_force(rng):
    pts = rng.uniform(-0.05, 0.05, (10000, 3))
    cone = AcceptanceCone.from_na((0, 0, 0.04), (0.2, -0.1, -1), 0.5, 0.03, 0.002)
    np.testing.assert_array_equal(cone.contains(pts), brute_contains(cone, pts))


def test_frame_cone_looks_down():
    T = np.eye(4)
    T[:3, 3] = [0.1, 0.2, 0.3]
    cone = AcceptanceCone.from_frame(T, 0.5, 0.03)
    np.testing.assert_array_equal(cone.axis, [0, 0, -1])
    np.testing.assert_array_equal(cone.apex, [0.1, 0.2, 0.3])


def test_mesh_mode_agrees_off_band(rng):
    pts = rng.uniform(-0.05, 0.05, (10000, 3))
    cone = AcceptanceCone.from_na((0, 0, 0.04), (0, 0.3, -1), 0.5, 0.03, 0.002)
    band = cone.boundary_band(pts, rho=32)
    agree = cone.contains(pts)[~band] == cone.contains_mesh(pts, rho=32)[~band]
    assert agree.mean() >= 0.999


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_membership_rigid_invariance(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-0.05, 0.05, (500, 3))
    cone = AcceptanceCone.from_na((0, 0, 0.04), (0, 0, -1), 0.5, 0.03, 0.002)
    T = np.eye(4)
    T[:3, :3] = random_rotation(rng)
    T[:3, 3] = rng.normal(size=3)
    moved = pts @ T[:3, :3].T + T[:3, 3]
    a = cone.contains(pts)
    b = cone.transformed(T).contains(moved)
    # points within rounding of the surface may flip; nothing else may
    a_ax, a_r = cone.axial_radial(pts)
    margin = np.minimum.reduce([np.abs(a_ax), np.abs(a_ax - cone.depth), np.abs(a_r - a_ax * math.tan(cone.half_angle))])
    firm = margin > 1e-12
    np.testing.assert_array_equal(a[firm], b[firm])


@given(st.floats(0.005, 0.05), st.floats(0.005, 0.05))
def test_membership_monotone_in_distance(d1, d2):
    d1, d2 = sorted((d1, d2))
    pts = np.random.default_rng(2).uniform(-0.06, 0.06, (2000, 3))
    small = AcceptanceCone.from_na((0, 0, 0.06), (0, 0, -1), 0.4, d1, 0.002).contains(pts)
    big = AcceptanceCone.from_na((0, 0, 0.06), (0, 0, -1), 0.4, d2, 0.002).contains(pts)
    assert np.all(big[small])


def test_associate_marks_members_and_averages():
    pts = np.array([[0, 0, 0.0], [0.001, 0, 0.0], [0.5, 0, 0.0]])
    cloud = SpectralCloud(pts)
    cone = AcceptanceCone.from_na((0, 0, 0.03), (0, 0, -1), 0.5, 0.03, 0.002)
    cloud, members = associate_spectrum(cloud, cone, spec(np.full(16, 1.0)))
    assert members.tolist() == [0, 1]
    assert cloud.scanned_mask.tolist() == [True, True, False]
    cloud, _ = associate_spectrum(cloud, cone, spec(np.full(16, 3.0)))
    np.testing.assert_allclose(cloud.spectra[0], 2.0)
    assert cloud.hits.tolist() == [2, 2, 0]
    cloud, _ = associate_spectrum(cloud, cone, spec(np.full(16, 7.0)), reducer="last")
    np.testing.assert_allclose(cloud.spectra[1], 7.0)


def test_associate_warns_on_empty():
    cone = AcceptanceCone.from_na((0, 0, 0.03), (0, 0, -1), 0.5, 0.03, 0.002)
    cloud = SpectralCloud(np.array([[1.0, 1.0, 0.0]]))
    with pytest.warns(EmptyIntersectionWarning):
        out, members = associate_spectrum(cloud, cone, spec(np.ones(16)))
    assert len(members) == 0 and out is cloud


# ---- SAM ---------------------------------------------------------------------------------


def test_sam_basics():
    s = np.array([1.0, 2.0, 3.0])
    assert sam_score(s, s) == 0.0
    assert sam_score([1, 0], [0, 1]) == pytest.approx(math.pi / 2)
    assert sam_score(s, 4.2 * s) == pytest.approx(0.0, abs=1e-15)
    assert sam_score([1.0, 0.0], [-1.0, 0.0]) == pytest.approx(math.pi)


def test_sam_zero_norm():
    with pytest.raises(ZeroNorm):
        sam_score([0.0, 0.0], [1.0, 2.0])


def test_sam_skips_masked_bins():
    a = Spectrum([1.0, 2.0, 99.0], [1.0, 2.0, 3.0], valid=[True, True, False])
    b = Spectrum([1.0, 2.0, 0.0], [1.0, 2.0, 3.0])
    assert sam_score(a, b) == 0.0


vec = arrays(np.float64, 8, elements=st.floats(0.01, 10.0))


@given(vec, vec, st.floats(0.01, 100), st.floats(0.01, 100))
def test_sam_symmetry_and_scale(a, b, c1, c2):
    s = sam_score(a, b)
    assert 0.0 <= s <= math.pi
    assert s == pytest.approx(sam_score(b, a), abs=1e-12)
    assert sam_score(c1 * a, c2 * b) == pytest.approx(s, abs=1e-12)


@given(vec, st.floats(-1e-12, 1e-12))
def test_sam_never_nan_on_near_parallel(a, eps):
    assume(np.linalg.norm(a) > 0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert not math.isnan(sam_score(a, a * (1 + eps)))
