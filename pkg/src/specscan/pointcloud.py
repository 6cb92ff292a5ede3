"""Spectral point cloud container and the cleanup pipeline applied before planning.

Every stage returns a new cloud; per-point attributes (normals, spectra,
scan mask) are always indexed together so they never drift apart.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree
from sklearn.cluster import DBSCAN

from .errors import DegenerateNeighborhood, NoCluster, TooFewPoints


@dataclass(frozen=True, eq=False)
class SpectralCloud:
    """Points with optional normals and per-point reflectance spectra.

    ``spectra`` is an ``(N, W)`` array whose rows are NaN for points that have
    not been scanned; ``hits`` counts how many observations were folded into
    each row.
    """

    points: np.ndarray
    normals: np.ndarray | None = None
    spectra: np.ndarray | None = None
    wavelengths: np.ndarray | None = None
    hits: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "points", pts)
        n = len(pts)
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=float).reshape(-1, 3)
            if len(nrm) != n:
                raise ValueError(f"{len(nrm)} normals for {n} points")
            object.__setattr__(self, "normals", nrm)
        if self.wavelengths is not None:
            object.__setattr__(self, "wavelengths", np.asarray(self.wavelengths, dtype=float))
        if self.spectra is not None:
            if self.wavelengths is None:
                raise ValueError("spectra require a wavelength axis")
            spec = np.asarray(self.spectra, dtype=float).reshape(n, -1)
            if spec.shape[1] != len(self.wavelengths):
                raise ValueError(
                    f"spectra have {spec.shape[1]} bins, wavelength axis has {len(self.wavelengths)}"
                )
            object.__setattr__(self, "spectra", spec)
            hits = np.zeros(n, dtype=int) if self.hits is None else np.asarray(self.hits, dtype=int)
            object.__setattr__(self, "hits", hits)

    def __len__(self):
        return len(self.points)

    @property
    def scanned_mask(self):
        if self.spectra is None:
            return np.zeros(len(self), dtype=bool)
        return ~np.isnan(self.spectra).any(axis=1)

    def subset(self, idx):
        """Cloud restricted to ``idx`` (boolean mask or integer indices)."""
        idx = np.asarray(idx)
        return replace(
            self,
            points=self.points[idx],
            normals=None if self.normals is None else self.normals[idx],
            spectra=None if self.spectra is None else self.spectra[idx],
            hits=None if self.hits is None else self.hits[idx],
        )

    def with_wavelengths(self, wavelengths):
        """Attach an empty spectral channel if the cloud has none yet."""
        if self.spectra is not None:
            return self
        w = np.asarray(wavelengths, dtype=float)
        return replace(
            self,
            wavelengths=w,
            spectra=np.full((len(self), len(w)), np.nan),
            hits=np.zeros(len(self), dtype=int),
        )

    def transformed(self, T):
        """Apply a 4x4 rigid transform to points and normals."""
        T = np.asarray(T, dtype=float)
        pts = self.points @ T[:3, :3].T + T[:3, 3]
        nrm = None if self.normals is None else self.normals @ T[:3, :3].T
        return replace(self, points=pts, normals=nrm)


@dataclass(frozen=True)
class CropBox:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 3 or len(hi) != 3 or not all(a < b for a, b in zip(lo, hi)):
            raise ValueError("crop box needs min < max on every axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)


def crop(cloud, box):
    inside = np.all((cloud.points >= box.lo) & (cloud.points <= box.hi), axis=1)
    return cloud.subset(inside)


def _plane_from_points(p0, p1, p2):
    n = np.cross(p1 - p0, p2 - p0)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    return n, norm


def fit_plane(points):
    """Least-squares plane ``(unit normal, offset)`` with ``n . x + offset = 0``."""
    c = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - c, full_matrices=False)
    n = vt[-1]
    if n[2] < 0 or (n[2] == 0 and (n[1] < 0 or (n[1] == 0 and n[0] < 0))):
        n = -n
    return n, float(-n @ c)


def remove_plane_ransac(cloud, dist_thresh=0.005, iters=1000, seed=0, batch=256):
    """Drop the inliers of the dominant plane.

    Each iteration fits a plane to three random points and counts points
    within ``dist_thresh``; the best candidate is refit on its inliers and
    the inliers of the refit plane are removed.

    Returns:
        ``(remaining cloud, (unit normal, offset))`` with the normal's z
        component non-negative.
    """
    pts = cloud.points
    n = len(pts)
    if n < 3:
        raise TooFewPoints(f"plane fit needs 3 points, got {n}")
    rng = np.random.default_rng(seed)
    samples = np.array([rng.choice(n, 3, replace=False) for _ in range(iters)])

    best_count, best = -1, None
    for start in range(0, iters, batch):
        s = samples[start : start + batch]
        normal, norm = _plane_from_points(pts[s[:, 0]], pts[s[:, 1]], pts[s[:, 2]])
        valid = norm[:, 0] > 1e-12
        if not valid.any():
            continue
        normal = normal[valid] / norm[valid]
        offset = -np.einsum("ij,ij->i", normal, pts[s[valid, 0]])
        counts = (np.abs(pts @ normal.T + offset) <= dist_thresh).sum(axis=0)
        k = int(np.argmax(counts))
        if counts[k] > best_count:
            best_count, best = int(counts[k]), (normal[k], offset[k])
    if best is None:
        raise TooFewPoints("all sampled triples were collinear")

    inliers = np.abs(pts @ best[0] + best[1]) <= dist_thresh
    normal, offset = fit_plane(pts[inliers])
    refit = np.abs(pts @ normal + offset) <= dist_thresh
    if refit.sum() >= inliers.sum():
        inliers = refit
    else:
        normal, offset = best
        if normal[2] < 0:
            normal, offset = -normal, -offset
    return cloud.subset(~inliers), (normal, float(offset))


def cluster_labels(points, eps, min_points):
    """DBSCAN labels; noise is -1 and clusters are numbered in discovery order."""
    if len(points) == 0:
        return np.zeros(0, dtype=int)
    return DBSCAN(eps=eps, min_samples=min_points).fit(points).labels_


def cluster_largest(cloud, eps=0.01, min_points=10):
    labels = cluster_labels(cloud.points, eps, min_points)
    good = labels[labels >= 0]
    if len(good) == 0:
        raise NoCluster("every point was classified as noise")
    counts = np.bincount(good)
    # argmax returns the first maximum, which is the earliest discovered cluster
    return cloud.subset(labels == int(np.argmax(counts)))


def voxel_keys(points, voxel):
    return np.floor(points / voxel).astype(np.int64)


def voxel_downsample(cloud, voxel):
    """One centroid per occupied voxel of a grid anchored at the origin.

    Normals are averaged and renormalised, spectra averaged over the scanned
    members of each voxel. Output order follows the sorted voxel keys.
    """
    if not voxel > 0:
        raise ValueError("voxel size must be positive")
    if len(cloud) == 0:
        return cloud
    keys = voxel_keys(cloud.points, voxel)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    m = len(counts)

    def group_mean(values):
        out = np.zeros((m, values.shape[1]))
        np.add.at(out, inverse, values)
        return out / counts[:, None]

    pts = group_mean(cloud.points)
    normals = None
    if cloud.normals is not None:
        normals = group_mean(cloud.normals)
        lens = np.linalg.norm(normals, axis=1, keepdims=True)
        normals = np.divide(normals, lens, out=np.zeros_like(normals), where=lens > 0)
    spectra = hits = None
    if cloud.spectra is not None:
        scanned = cloud.scanned_mask
        filled = np.where(scanned[:, None], cloud.spectra, 0.0)
        sums = np.zeros((m, filled.shape[1]))
        np.add.at(sums, inverse, filled)
        n_scanned = np.bincount(inverse, weights=scanned.astype(float), minlength=m)
        spectra = np.full_like(sums, np.nan)
        spectra[n_scanned > 0] = sums[n_scanned > 0] / n_scanned[n_scanned > 0, None]
        hits = np.bincount(inverse, weights=cloud.hits, minlength=m).astype(int)
    return SpectralCloud(pts, normals, spectra, cloud.wavelengths, hits)


def estimate_normals(cloud, k=30, viewpoint=(0.0, 0.0, 0.0), orient="toward", rank_tol=1e-10):
    """PCA normals from the ``k`` nearest neighbours (the point included).

    Args:
        orient: ``"toward"`` flips each normal to face ``viewpoint``;
            ``"away"`` makes it face away (outward normals on a closed
            surface when ``viewpoint`` is inside it).

    Raises:
        DegenerateNeighborhood: a neighbourhood is collinear (covariance
            rank below 2).
    """
    n = len(cloud)
    if k < 3:
        raise ValueError("need k >= 3 neighbours")
    if n < k:
        raise TooFewPoints(f"normal estimation with k={k} needs at least {k} points, got {n}")
    pts = cloud.points
    _, idx = cKDTree(pts).query(pts, k=k)
    nb = pts[idx]
    centred = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centred, centred) / k
    evals, evecs = np.linalg.eigh(cov)
    scale = np.maximum(evals[:, 2], 1e-300)
    bad = evals[:, 1] <= rank_tol * scale
    if bad.any():
        raise DegenerateNeighborhood(
            f"{int(bad.sum())} neighbourhoods are collinear (first at point {int(np.argmax(bad))})"
        )
    normals = evecs[:, :, 0]
    to_view = np.asarray(viewpoint, dtype=float) - pts
    sign = np.where(np.einsum("ij,ij->i", normals, to_view) < 0, -1.0, 1.0)
    if orient == "away":
        sign = -sign
    elif orient != "toward":
        raise ValueError("orient must be 'toward' or 'away'")
    normals = normals * sign[:, None]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return replace(cloud, normals=normals)
