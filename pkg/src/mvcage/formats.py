"""File formats: CSV tables, JSON documents, GeoJSON and a binary container.

Floats are written with 17 significant digits so CSV round trips are exact
and reruns produce byte-identical files. See FORMATS.md for the contract.
"""
from __future__ import annotations

import csv
import io
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .geometry import build_grid, grid_from_arrays, make_partition

MAGIC = b"MVCB"


def fmt(x):
    return format(float(x), ".17g")


def _open_write(path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return open(path, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc}") from exc


def _read_text(path):
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc


def write_json(path, obj):
    with _open_write(path) as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    try:
        return json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path} is not valid JSON: {exc}") from exc


def write_table(path, header, rows):
    with _open_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def read_table(path, expect=None):
    rows = list(csv.reader(io.StringIO(_read_text(path))))
    if not rows:
        raise FormatError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    if expect is not None and header != list(expect):
        raise FormatError(f"{path}: expected columns {list(expect)}, found {header}")
    return header, body


# replicated data ----------------------------------------------------------

DATA_COLUMNS = ["rep", "cell", "process", "value"]


def write_data_csv(path, data):
    """Long table of an (r, n, N) array; missing values are written empty."""
    data = np.asarray(data, dtype=float)
    r, n, N = data.shape

    def rows():
        for k in range(r):
            for c in range(n):
                for j in range(N):
                    v = data[k, c, j]
                    yield (k, c, j, "" if np.isnan(v) else fmt(v))
    write_table(path, DATA_COLUMNS, rows())


def read_data_csv(path):
    _, body = read_table(path, DATA_COLUMNS)
    try:
        idx = np.array([[int(b[0]), int(b[1]), int(b[2])] for b in body], dtype=np.int64)
        vals = np.array([float(b[3]) if b[3] != "" else np.nan for b in body])
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: malformed row ({exc})") from exc
    if len(idx) == 0:
        raise FormatError(f"{path} has no data rows")
    shape = tuple(idx.max(axis=0) + 1)
    out = np.full(shape, np.nan)
    out[idx[:, 0], idx[:, 1], idx[:, 2]] = vals
    return out


def write_binary(path, arrays, meta=None):
    """Container: magic, uint64 header length, JSON header, raw float64 arrays
    (little endian, C order) in header order."""
    header = {"meta": meta or {}, "arrays": []}
    blobs = []
    for name, a in arrays.items():
        a = np.ascontiguousarray(a, dtype="<f8")
        header["arrays"].append({"name": name, "shape": list(a.shape)})
        blobs.append(a.tobytes())
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(hb)))
            fh.write(hb)
            for b in blobs:
                fh.write(b)
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc}") from exc


def read_binary(path):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    if raw[:4] != MAGIC:
        raise FormatError(f"{path} is not a binary container")
    (hl,) = struct.unpack("<Q", raw[4:12])
    try:
        header = json.loads(raw[12:12 + hl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header") from exc
    pos = 12 + hl
    out = {}
    for spec in header["arrays"]:
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        nbytes = 8 * count
        if pos + nbytes > len(raw):
            raise FormatError(f"{path}: truncated array {spec['name']}")
        out[spec["name"]] = np.frombuffer(raw[pos:pos + nbytes], dtype="<f8").reshape(spec["shape"]).copy()
        pos += nbytes
    return out, header["meta"]


# grids and partitions -----------------------------------------------------

def grid_to_dict(grid):
    if grid.counts is not None:
        return {"bbox": grid.bbox.tolist(), "counts": list(grid.counts)}
    return {"centers": grid.centers.tolist(), "areas": grid.areas.tolist(),
            "edges": grid.edges.tolist(), "bbox": grid.bbox.tolist()}


def grid_from_dict(d):
    try:
        if "counts" in d:
            return build_grid(d["bbox"], d["counts"])
        return grid_from_arrays(d["centers"], d["areas"], d["edges"], d.get("bbox"))
    except KeyError as exc:
        raise FormatError(f"grid description lacks {exc}") from exc


def write_labels(path, part):
    write_table(path, ["cell", "unit"], ((c, int(u)) for c, u in enumerate(part.labels)))


def read_labels(path, grid):
    _, body = read_table(path, ["cell", "unit"])
    labels = np.empty(grid.n, dtype=np.int64)
    seen = np.zeros(grid.n, dtype=bool)
    try:
        for c, u in body:
            labels[int(c)] = int(u)
            seen[int(c)] = True
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: malformed labels ({exc})") from exc
    if not seen.all():
        raise FormatError(f"{path} does not label every grid cell")
    return make_partition(labels, grid)


# eigensystems, draws, reports ---------------------------------------------

def write_eigensystem(stem, sys):
    """``<stem>.json`` with eigenvalues, mixing vectors and provenance, and
    ``<stem>.csv`` with (cell, process, k, value) eigenfunction rows."""
    doc = {"provenance": sys.provenance, "eigenvalues": [fmt(v) for v in sys.eigenvalues],
           "N": sys.N, "n": sys.n, "M": sys.M,
           "sizes": list(sys.sizes) if sys.sizes else None,
           "mixing": None if sys.mixing is None else [[fmt(v) for v in row] for row in sys.mixing]}
    write_json(f"{stem}.json", doc)
    F = sys.eigenfunctions
    write_table(f"{stem}.csv", ["cell", "process", "k", "value"],
                ((c, j, k, F[j, c, k]) for c in range(sys.n) for j in range(sys.N)
                 for k in range(sys.M)))


def read_eigensystem(stem):
    from .kle import MultivariateEigenSystem
    doc = read_json(f"{stem}.json")
    _, body = read_table(f"{stem}.csv", ["cell", "process", "k", "value"])
    F = np.zeros((doc["N"], doc["n"], doc["M"]))
    for c, j, k, v in body:
        F[int(j), int(c), int(k)] = float(v)
    mix = None if doc["mixing"] is None else np.array(doc["mixing"], dtype=float)
    return MultivariateEigenSystem(np.array(doc["eigenvalues"], dtype=float), F,
                                   doc["provenance"], mix,
                                   tuple(doc["sizes"]) if doc["sizes"] else None)


def write_draws_csv(path, draws):
    """Rows (iter, process, parameter, index, value). For ``nu`` the index is
    ``rep * M_j + k``."""
    def rows():
        for d in range(draws.n_draws):
            for j in range(draws.N):
                yield (d, j, "mu", 0, draws.mu[d, j])
                yield (d, j, "sigma2", 0, draws.sigma2[d, j])
                for i, v in enumerate(draws.nu[j][d].ravel()):
                    yield (d, j, "nu", i, v)
    write_table(path, ["iter", "process", "parameter", "index", "value"], rows())


def write_draws_binary(path, draws):
    arrays = {"mu": draws.mu, "sigma2": draws.sigma2}
    for j, v in enumerate(draws.nu):
        arrays[f"nu{j}"] = v
    write_binary(path, arrays, {"sizes": list(draws.sizes), "replications": draws.r})


def read_draws_binary(path):
    arrays, meta = read_binary(path)
    nu = [arrays[f"nu{j}"] for j in range(len(meta["sizes"]))]
    return arrays["mu"], arrays["sigma2"], nu


def write_report_csv(path, report):
    """Rows (unit, process, value); process ``all`` holds the unit total."""
    def rows():
        for k in range(report.m):
            for j in range(report.per_process.shape[1]):
                yield (k, j, report.per_process[k, j])
            yield (k, "all", report.values[k])
    write_table(path, ["unit", "process", "value"], rows())


def write_trace_csv(path, trace):
    write_table(path, ["j", "units", "total", "weighted_total"],
                ((int(a), int(b), float(c), float(d)) for a, b, c, d in trace))


def _unit_geometry(grid, cells):
    bounds = grid.cell_bounds()
    if bounds is None:
        return {"type": "MultiPoint", "coordinates": grid.centers[cells].tolist()}
    if grid.dim == 1:
        segs = [[[float(b[0, 0]), 0.0], [float(b[0, 1]), 0.0]] for b in bounds[cells]]
        return {"type": "MultiLineString", "coordinates": segs}
    polys = []
    for b in bounds[cells]:
        (x0, x1), (y0, y1) = b[0], b[1]
        polys.append([[[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]])
    return {"type": "MultiPolygon", "coordinates": polys}


def write_geojson(path, grid, part, report=None):
    """One feature per unit with its cells as geometry and criterion values
    as properties. Regular 2-D grids yield polygons, 1-D grids line segments
    and irregular grids the cell centers."""
    if grid.dim > 2:
        raise FormatError("GeoJSON export supports 1-D and 2-D grids")
    feats = []
    for k in range(part.m):
        cells = part.members(k)
        props = {"unit": k, "cells": int(len(cells)), "area": float(part.unit_areas[k])}
        if report is not None:
            props["dmvcage"] = float(report.values[k])
            for j in range(report.per_process.shape[1]):
                props[f"process_{j}"] = float(report.per_process[k, j])
        feats.append({"type": "Feature", "properties": props,
                      "geometry": _unit_geometry(grid, cells)})
    write_json(path, {"type": "FeatureCollection", "features": feats})

