"""Readers and writers for ASCII PLY, XYZ text and the spectral sidecar CSV.

Floats are written with ``repr`` so a write/read cycle is lossless and a
rewrite of an unchanged cloud is byte-identical.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .pointcloud import SpectralCloud


def _fmt(v):
    return repr(float(v))


def write_ply(path, cloud):
    has_n = cloud.normals is not None
    lines = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}"]
    lines += [f"property double {c}" for c in ("x", "y", "z")]
    if has_n:
        lines += [f"property double {c}" for c in ("nx", "ny", "nz")]
    lines.append("end_header")
    for i, p in enumerate(cloud.points):
        row = list(p) + (list(cloud.normals[i]) if has_n else [])
        lines.append(" ".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path):
    """Read vertices (and faces, if any) from an ASCII PLY file.

    Returns:
        ``(cloud, faces)`` where ``faces`` is an ``(F, 3)`` int array or None.
    """
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != "ply":
        raise ValueError(f"{path}: not a PLY file")
    elements, props, i = [], {}, 1
    current = None
    while i < len(text):
        tok = text[i].split()
        i += 1
        if not tok:
            continue
        if tok[0] == "format" and tok[1] != "ascii":
            raise ValueError(f"{path}: only ASCII PLY is supported")
        if tok[0] == "element":
            current = tok[1]
            elements.append((current, int(tok[2])))
            props[current] = []
        elif tok[0] == "property":
            props[current].append(tok[-1])
        elif tok[0] == "end_header":
            break
    verts = faces = None
    for name, count in elements:
        rows = text[i : i + count]
        i += count
        if name == "vertex":
            data = np.array([[float(v) for v in r.split()] for r in rows]).reshape(count, -1)
            names = props[name]
            pts = data[:, [names.index(c) for c in ("x", "y", "z")]]
            nrm = None
            if all(c in names for c in ("nx", "ny", "nz")):
                nrm = data[:, [names.index(c) for c in ("nx", "ny", "nz")]]
            verts = SpectralCloud(pts, nrm)
        elif name == "face":
            tris = []
            for r in rows:
                idx = [int(v) for v in r.split()]
                poly = idx[1 : 1 + idx[0]]
                tris += [(poly[0], poly[j], poly[j + 1]) for j in range(1, len(poly) - 1)]
            faces = np.array(tris, dtype=int).reshape(-1, 3)
    if verts is None:
        raise ValueError(f"{path}: no vertex element")
    return verts, faces


def write_xyz(path, cloud):
    Path(path).write_text("".join(" ".join(_fmt(v) for v in p) + "\n" for p in cloud.points))


def read_xyz(path):
    data = np.loadtxt(path, ndmin=2)
    nrm = data[:, 3:6] if data.shape[1] >= 6 else None
    return SpectralCloud(data[:, :3], nrm)


def read_cloud(path):
    path = Path(path)
    if path.suffix.lower() == ".ply":
        cloud, _ = read_ply(path)
        return cloud
    return read_xyz(path)


def write_cloud(path, cloud):
    path = Path(path)
    if path.suffix.lower() == ".ply":
        write_ply(path, cloud)
    else:
        write_xyz(path, cloud)


def write_spectra_sidecar(path, cloud):
    """Scanned points only: ``point_index`` then one column per wavelength."""
    if cloud.spectra is None:
        raise ValueError("cloud carries no spectral channel")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["point_index"] + [_fmt(x) for x in cloud.wavelengths])
        for i in np.flatnonzero(cloud.scanned_mask):
            w.writerow([int(i)] + [_fmt(v) for v in cloud.spectra[i]])


def read_spectra_sidecar(path, cloud):
    """Attach spectra from a sidecar CSV to ``cloud``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[0] != "point_index":
        raise ValueError(f"{path}: first column must be point_index")
    wl = np.array([float(x) for x in header[1:]])
    out = cloud.with_wavelengths(wl)
    spectra = out.spectra.copy()
    hits = out.hits.copy()
    for r in body:
        i = int(r[0])
        spectra[i] = [float(x) for x in r[1:]]
        hits[i] = max(hits[i], 1)
    return SpectralCloud(out.points, out.normals, spectra, wl, hits)
