"""Spectrometer calibration, fibre acceptance cones and spectral similarity."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, Delaunay

from .errors import EmptyInput, LengthMismatch, ZeroNorm


class EmptyIntersectionWarning(UserWarning):
    """An acceptance cone contained no cloud points."""


class CalibrationWarning(UserWarning):
    """Some bins could not be calibrated (white minus dark not positive)."""


@dataclass(frozen=True)
class Instrument:
    numerical_aperture: float = 0.50
    bins: int = 256
    range_nm: tuple = (500.0, 1100.0)
    epsilon: float = 0.002

    def __post_init__(self):
        problems = []
        if not 0.0 < self.numerical_aperture < 1.0:
            problems.append("NA must lie in (0, 1)")
        if int(self.bins) < 1:
            problems.append("bins must be positive")
        if len(self.range_nm) != 2 or not self.range_nm[0] < self.range_nm[1]:
            problems.append("range_nm must be [low, high] with low < high")
        if self.epsilon < 0:
            problems.append("epsilon_m must be non-negative")
        if problems:
            raise ValueError("; ".join(problems))
        object.__setattr__(self, "range_nm", tuple(float(v) for v in self.range_nm))

    @property
    def wavelengths(self):
        return np.linspace(self.range_nm[0], self.range_nm[1], int(self.bins))

    @property
    def half_angle(self):
        return math.asin(self.numerical_aperture)

    def to_dict(self):
        return {
            "NA": self.numerical_aperture,
            "bins": int(self.bins),
            "range_nm": list(self.range_nm),
            "epsilon_m": self.epsilon,
        }

    @classmethod
    def from_dict(cls, d):
        unknown = sorted(set(d) - {"NA", "bins", "range_nm", "epsilon_m"})
        if unknown:
            raise ValueError(f"unknown instrument keys: {', '.join(unknown)}")
        default = cls()
        return cls(
            d.get("NA", default.numerical_aperture),
            d.get("bins", default.bins),
            tuple(d.get("range_nm", default.range_nm)),
            d.get("epsilon_m", default.epsilon),
        )

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Reflectance (or raw counts) on an ascending wavelength axis.

    ``valid`` marks bins that carry a usable value; calibration masks bins
    whose white reference does not exceed the dark reference.
    """

    values: np.ndarray
    wavelengths: np.ndarray
    integration_time: float | None = None
    valid: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        w = np.asarray(self.wavelengths, dtype=float).reshape(-1)
        if len(v) != len(w):
            raise LengthMismatch(f"{len(v)} values on a {len(w)}-bin axis")
        if len(w) > 1 and np.any(np.diff(w) <= 0):
            raise ValueError("wavelengths must be strictly ascending")
        valid = np.ones(len(v), dtype=bool) if self.valid is None else np.asarray(self.valid, dtype=bool)
        if not np.all(np.isfinite(v[valid])):
            raise ValueError("spectrum values must be finite")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "wavelengths", w)
        object.__setattr__(self, "valid", valid)

    def __len__(self):
        return len(self.values)


def _check_axes(*spectra):
    ref = spectra[0]
    for s in spectra[1:]:
        if len(s) != len(ref) or not np.array_equal(s.wavelengths, ref.wavelengths):
            raise LengthMismatch("spectra do not share a wavelength axis")


@dataclass(frozen=True)
class CalibrationPair:
    white: Spectrum
    dark: Spectrum
    integration_time: float | None = None


def median_stack(samples):
    """Per-bin median of repeated measurements (mean of the middle two for even counts)."""
    samples = list(samples)
    if not samples:
        raise EmptyInput("median of zero spectra")
    _check_axes(*samples)
    t = samples[0].integration_time
    values = np.median(np.stack([s.values for s in samples]), axis=0)
    valid = np.logical_and.reduce([s.valid for s in samples])
    return Spectrum(values, samples[0].wavelengths, t, valid)


def calibrate_spectrum(raw, cal):
    """Reflectance ``(raw - dark) / (white - dark)`` per bin.

    Bins where ``white - dark <= 0`` are set to 0 and marked invalid; a
    :class:`CalibrationWarning` reports how many.
    """
    _check_axes(raw, cal.white, cal.dark)
    times = {s.integration_time for s in (raw, cal.white, cal.dark)} | {cal.integration_time}
    times.discard(None)
    if len(times) > 1:
        raise ValueError(f"integration times differ: {sorted(times)}")
    denom = cal.white.values - cal.dark.values
    ok = (denom > 0) & raw.valid & cal.white.valid & cal.dark.valid
    out = np.zeros_like(denom)
    out[ok] = (raw.values[ok] - cal.dark.values[ok]) / denom[ok]
    if not ok.all():
        warnings.warn(f"{int((~ok).sum())} bins could not be calibrated", CalibrationWarning, stacklevel=2)
    t = next(iter(times)) if times else None
    return Spectrum(out, raw.wavelengths, t, ok)


def sam_score(a, b):
    """Spectral angle between two spectra, in radians on [0, pi].

    The angle is ``arccos`` of the normalised dot product, evaluated in the
    half-angle form so identical or scaled spectra score exactly 0. Accepts arrays or :class:`Spectrum` objects; for the latter, bins invalid
    in either input are left out of both vectors.
    """
    if isinstance(a, Spectrum) and isinstance(b, Spectrum):
        _check_axes(a, b)
        keep = a.valid & b.valid
        x, y = a.values[keep], b.values[keep]
    else:
        x = np.asarray(getattr(a, "values", a), dtype=float).reshape(-1)
        y = np.asarray(getattr(b, "values", b), dtype=float).reshape(-1)
        if len(x) != len(y):
            raise LengthMismatch(f"{len(x)} vs {len(y)} bins")
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise ZeroNorm("SAM is undefined for a zero spectrum")
    return float(_angle(x[None, :] / nx, y[None, :] / ny)[0])


def _angle(u, v):
    # equals arccos(u . v) for unit rows, but stays accurate near 0 and pi
    # where arccos turns one rounding error into ~1e-8 rad
    d = np.linalg.norm(u - v, axis=1)
    s = np.linalg.norm(u + v, axis=1)
    return np.clip(2.0 * np.arctan2(d, s), 0.0, math.pi)


def sam_rows(a, b):
    """Row-wise SAM between two ``(N, W)`` arrays."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise ZeroNorm("SAM is undefined for a zero spectrum")
    return _angle(a / na[:, None], b / nb[:, None])


def cone_area(na, d):
    """Area of the circle the acceptance cone cuts on a surface at distance ``d``."""
    if not 0.0 < na < 1.0:
        raise ValueError("numerical aperture must lie in (0, 1)")
    if not d > 0:
        raise ValueError("distance must be positive")
    return math.pi * (d * math.tan(math.asin(na))) ** 2


@dataclass(frozen=True, eq=False)
class AcceptanceCone:
    """Finite cone of directions accepted by the fibre.

    ``distance`` is the sensed standoff and ``epsilon`` the extension below
    the surface; the cone is truncated at ``depth = distance + epsilon``.
    """

    apex: np.ndarray
    axis: np.ndarray
    half_angle: float
    distance: float
    epsilon: float = 0.0

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float)
        n = np.linalg.norm(axis)
        if n == 0:
            raise ZeroNorm("cone axis has zero length")
        object.__setattr__(self, "apex", np.asarray(self.apex, dtype=float))
        object.__setattr__(self, "axis", axis / n)
        if not 0.0 < self.half_angle < math.pi / 2:
            raise ValueError("half angle must lie in (0, pi/2)")
        if not self.distance + self.epsilon > 0:
            raise ValueError("cone depth must be positive")

    @classmethod
    def from_na(cls, apex, axis, na, distance, epsilon=0.0):
        return cls(apex, axis, math.asin(na), distance, epsilon)

    @classmethod
    def from_frame(cls, T, na, distance, epsilon=0.0):
        """Cone at a probe frame looking down the frame's -z axis."""
        T = np.asarray(T, dtype=float)
        return cls.from_na(T[:3, 3], -T[:3, 2], na, distance, epsilon)

    @property
    def depth(self):
        return self.distance + self.epsilon

    @property
    def base_radius(self):
        return self.depth * math.tan(self.half_angle)

    def axial_radial(self, points):
        v = np.asarray(points, dtype=float) - self.apex
        a = v @ self.axis
        r = np.linalg.norm(v - a[:, None] * self.axis, axis=1)
        return a, r

    def contains(self, points):
        """Analytic membership: within the half angle and ``0 <= axial <= depth``."""
        a, r = self.axial_radial(points)
        return (a >= 0.0) & (a <= self.depth) & (r <= a * math.tan(self.half_angle))

    def transformed(self, T):
        T = np.asarray(T, dtype=float)
        return replace(self, apex=T[:3, :3] @ self.apex + T[:3, 3], axis=T[:3, :3] @ self.axis)

    def mesh_points(self, rho=32):
        """Apex plus ``rho`` points evenly spaced on the base circle."""
        u = np.cross(self.axis, [1.0, 0.0, 0.0])
        if np.linalg.norm(u) < 1e-6:
            u = np.cross(self.axis, [0.0, 1.0, 0.0])
        u /= np.linalg.norm(u)
        v = np.cross(self.axis, u)
        t = 2.0 * math.pi * np.arange(rho) / rho
        centre = self.apex + self.depth * self.axis
        ring = centre + self.base_radius * (np.outer(np.cos(t), u) + np.outer(np.sin(t), v))
        return np.vstack([self.apex, ring])

    def contains_mesh(self, points, rho=32):
        """Membership through the convex hull of the sampled cone and a Delaunay query.

        The hull is an inscribed pyramid, so this slightly under-covers the
        analytic cone near its lateral surface.
        """
        verts = self.mesh_points(rho)
        hull = ConvexHull(verts)
        tri = Delaunay(verts[hull.vertices])
        return tri.find_simplex(np.asarray(points, dtype=float)) >= 0

    def boundary_band(self, points, rho=32, tol=1e-9):
        """Points whose membership depends on the ``rho`` discretisation.

        That is everything between the inscribed pyramid and the true cone,
        plus points within ``tol`` of the apex plane or the base plane.
        """
        a, r = self.axial_radial(points)
        outer = a * math.tan(self.half_angle)
        inner = outer * math.cos(math.pi / rho)
        lateral = (r > inner - tol) & (r <= outer + tol)
        caps = (np.abs(a) <= tol) | (np.abs(a - self.depth) <= tol)
        return (lateral & (a > -tol) & (a < self.depth + tol)) | caps


def associate_spectrum(cloud, cone, spectrum, reducer="mean", method="analytic", rho=32):
    """Attach ``spectrum`` to every cloud point inside ``cone``.

    Args:
        reducer: how a revisited point combines spectra; ``"mean"`` keeps a
            running mean over all hits, ``"last"`` keeps the newest.
        method: ``"analytic"`` or ``"mesh"`` (hull of a ``rho``-sampled cone).

    Returns:
        ``(updated cloud, member indices)``.
    """
    if method == "analytic":
        inside = cone.contains(cloud.points)
    elif method == "mesh":
        inside = cone.contains_mesh(cloud.points, rho)
    else:
        raise ValueError("method must be 'analytic' or 'mesh'")
    members = np.flatnonzero(inside)
    if len(members) == 0:
        warnings.warn("acceptance cone intersects no points", EmptyIntersectionWarning, stacklevel=2)
        return cloud, members

    values = getattr(spectrum, "values", spectrum)
    wl = getattr(spectrum, "wavelengths", None)
    if cloud.spectra is None:
        if wl is None:
            raise ValueError("cloud has no wavelength axis and spectrum carries none")
        cloud = cloud.with_wavelengths(wl)
    elif wl is not None and not np.array_equal(wl, cloud.wavelengths):
        raise LengthMismatch("spectrum axis differs from the cloud's")

    spectra = cloud.spectra.copy()
    hits = cloud.hits.copy()
    if reducer == "mean":
        old = hits[members]
        prev = np.where(old[:, None] > 0, spectra[members], 0.0)
        spectra[members] = (prev * old[:, None] + values) / (old[:, None] + 1)
    elif reducer == "last":
        spectra[members] = values
    else:
        raise ValueError("reducer must be 'mean' or 'last'")
    hits[members] += 1
    return replace(cloud, spectra=spectra, hits=hits), members


def read_spectra_csv(path):
    """Read ``wavelength_nm,...`` then one ``label,values...`` row per sample.

    Returns:
        ``(wavelengths, labels, values)`` with ``values`` shaped ``(S, W)``.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or rows[0][0] != "wavelength_nm":
        raise ValueError(f"{path}: header must start with wavelength_nm")
    wl = np.array([float(x) for x in rows[0][1:]])
    labels = [r[0] for r in rows[1:]]
    values = np.array([[float(x) for x in r[1:]] for r in rows[1:]]).reshape(len(labels), len(wl))
    return wl, labels, values


def write_spectra_csv(path, wavelengths, labels, values):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["wavelength_nm"] + [repr(float(x)) for x in wavelengths])
        for lab, row in zip(labels, np.atleast_2d(values)):
            w.writerow([lab] + [repr(float(v)) for v in row])
