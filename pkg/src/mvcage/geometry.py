"""Grid discretization of the spatial domain, areal units and block averaging.

A :class:`SpatialGrid` is a set of small cells (pseudo points at cell
centroids) that acts as the integration measure for every quadrature in the
package. A :class:`Partition` groups those cells into areal units.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .errors import InvalidArgument


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SpatialGrid:
    """Cells of the discretized domain.

    Attributes
    ----------
    centers : (n, dim) array of cell centroids.
    areas : (n,) array of positive cell areas (lengths in 1-D).
    edges : (E, 2) int array, each undirected adjacency listed once with i < j.
    bbox : (dim, 2) array of lower/upper domain bounds.
    counts : cells per axis for regular lattices, ``None`` for user grids.
    """

    centers: np.ndarray
    areas: np.ndarray
    edges: np.ndarray
    bbox: np.ndarray
    counts: tuple | None = None

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=float)
        if centers.ndim == 1:
            centers = centers[:, None]
        object.__setattr__(self, "centers", _frozen(centers))
        object.__setattr__(self, "areas", _frozen(np.ravel(self.areas)))
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if len(edges):
            edges = np.sort(edges, axis=1)
            edges = np.unique(edges, axis=0)
        object.__setattr__(self, "edges", _frozen(edges, np.int64))
        object.__setattr__(self, "bbox", _frozen(np.asarray(self.bbox, float).reshape(-1, 2)))
        self._validate()

    def _validate(self):
        n = len(self.centers)
        if n == 0:
            raise InvalidArgument("grid has no cells")
        if self.areas.shape != (n,):
            raise InvalidArgument(f"expected {n} cell areas, got {self.areas.shape}")
        if not np.all(np.isfinite(self.centers)):
            raise InvalidArgument("cell centers must be finite")
        if np.any(~(self.areas > 0)):
            raise InvalidArgument("cell areas must be strictly positive")
        if self.bbox.shape[0] != self.dim:
            raise InvalidArgument("bbox dimension does not match centers")
        if np.any(self.bbox[:, 1] <= self.bbox[:, 0]):
            raise InvalidArgument("bbox must have lower < upper on every axis")
        if self.counts is not None:
            vol = float(np.prod(self.bbox[:, 1] - self.bbox[:, 0]))
            if abs(self.areas.sum() - vol) > 1e-9 * vol:
                raise InvalidArgument("cell areas do not sum to the domain volume")
        if len(self.edges):
            if self.edges.min() < 0 or self.edges.max() >= n:
                raise InvalidArgument("adjacency references unknown cells")
            if np.any(self.edges[:, 0] == self.edges[:, 1]):
                raise InvalidArgument("adjacency must be irreflexive")
        if n > 1:
            ncomp, _ = connected_components(self.adjacency, directed=False)
            if ncomp != 1:
                raise InvalidArgument(f"grid adjacency graph is disconnected ({ncomp} components)")

    @property
    def n(self):
        return len(self.centers)

    @property
    def dim(self):
        return self.centers.shape[1]

    @property
    def volume(self):
        return float(self.areas.sum())

    @cached_property
    def adjacency(self):
        n = self.n
        e = self.edges
        data = np.ones(2 * len(e))
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))

    def neighbors(self, i):
        a = self.adjacency
        return a.indices[a.indptr[i]:a.indptr[i + 1]]

    def cell_bounds(self):
        """Per-cell (dim, 2) bounds for regular lattices, else ``None``."""
        if self.counts is None:
            return None
        width = (self.bbox[:, 1] - self.bbox[:, 0]) / np.asarray(self.counts)
        lo = self.centers - width / 2
        return np.stack([lo, lo + width], axis=-1)


def build_grid(bbox, counts):
    """Regular lattice with rook adjacency.

    ``bbox`` is ``(lo, hi)`` in 1-D or a sequence of per-axis ``(lo, hi)``
    pairs; ``counts`` is an int or one int per axis. Cells are ordered
    C-style over the axes (last axis fastest).
    """
    bbox = np.asarray(bbox, dtype=float)
    if bbox.ndim == 1:
        bbox = bbox[None, :]
    if bbox.ndim != 2 or bbox.shape[1] != 2:
        raise InvalidArgument("bbox must be (lo, hi) pairs per axis")
    counts = np.atleast_1d(np.asarray(counts))
    if counts.shape != (bbox.shape[0],):
        raise InvalidArgument("counts must give one entry per bbox axis")
    if not np.issubdtype(counts.dtype, np.integer):
        if np.any(counts != np.round(counts)):
            raise InvalidArgument("counts must be integers")
        counts = counts.astype(int)
    if np.any(counts < 1):
        raise InvalidArgument("counts must be >= 1 on every axis")
    if np.any(bbox[:, 1] <= bbox[:, 0]) or not np.all(np.isfinite(bbox)):
        raise InvalidArgument("bbox must be finite with lo < hi")

    axes = []
    for (lo, hi), c in zip(bbox, counts):
        w = (hi - lo) / c
        axes.append(lo + w * (np.arange(c) + 0.5))
    mesh = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([m.ravel() for m in mesh], axis=1)
    cell_vol = np.prod((bbox[:, 1] - bbox[:, 0]) / counts)
    areas = np.full(len(centers), cell_vol)

    index = np.arange(len(centers)).reshape(tuple(counts))
    edges = []
    for ax in range(len(counts)):
        a = np.take(index, np.arange(counts[ax] - 1), axis=ax).ravel()
        b = np.take(index, np.arange(1, counts[ax]), axis=ax).ravel()
        edges.append(np.stack([a, b], axis=1))
    edges = np.concatenate(edges) if edges else np.empty((0, 2), int)
    return SpatialGrid(centers, areas, edges, bbox, tuple(int(c) for c in counts))


def grid_from_arrays(centers, areas, edges, bbox=None):
    """Pre-built irregular support (e.g. counties) with user areas and adjacency."""
    centers = np.asarray(centers, dtype=float)
    if centers.ndim == 1:
        centers = centers[:, None]
    if bbox is None:
        pad = 1e-9 + 1e-9 * np.abs(centers).max()
        bbox = np.stack([centers.min(0) - pad, centers.max(0) + pad], axis=1)
    return SpatialGrid(centers, areas, edges, bbox, None)


@dataclass(frozen=True, eq=False)
class Partition:
    """Assignment of grid cells to areal units ``0 .. m-1``."""

    labels: np.ndarray
    areas: np.ndarray
    contiguous: tuple | None = field(default=None)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1:
            raise InvalidArgument("labels must be one-dimensional")
        object.__setattr__(self, "labels", _frozen(labels, np.int64))
        object.__setattr__(self, "areas", _frozen(self.areas))
        if self.areas.shape != self.labels.shape:
            raise InvalidArgument("labels and areas differ in length")
        if len(labels) and (self.labels.min() < 0):
            raise InvalidArgument("labels must be non-negative")
        sizes = np.bincount(self.labels)
        if np.any(sizes == 0):
            raise InvalidArgument("every unit must be nonempty; relabel with make_partition")

    @property
    def m(self):
        return int(self.labels.max()) + 1

    @property
    def n(self):
        return len(self.labels)

    @property
    def unit_sizes(self):
        return np.bincount(self.labels, minlength=self.m)

    @property
    def unit_areas(self):
        return np.bincount(self.labels, weights=self.areas, minlength=self.m)

    def members(self, k):
        return np.flatnonzero(self.labels == k)

    def as_sets(self):
        return frozenset(frozenset(self.members(k).tolist()) for k in range(self.m))


def make_partition(labels, grid, relabel=True):
    """Partition from arbitrary integer labels; units renumbered ``0..m-1``
    in sorted label order. Contiguity flags are computed against ``grid``."""
    labels = np.asarray(labels)
    if labels.shape != (grid.n,):
        raise InvalidArgument(f"expected {grid.n} labels, got shape {labels.shape}")
    if relabel:
        _, labels = np.unique(labels, return_inverse=True)
    part = Partition(labels, grid.areas)
    flags = tuple(bool(f) for f in check_contiguity(part, grid))
    return Partition(part.labels, grid.areas, flags)


def singleton_partition(grid):
    return make_partition(np.arange(grid.n), grid)


def whole_partition(grid):
    return make_partition(np.zeros(grid.n, dtype=int), grid)


def aggregation_matrix(part):
    """(m, n) matrix whose rows hold area weights |B_c| / |A_k| of each unit."""
    G = np.zeros((part.m, part.n))
    G[part.labels, np.arange(part.n)] = part.areas / part.unit_areas[part.labels]
    return G


def areal_average(values, part):
    """Area-weighted mean of per-cell values within each unit.

    ``values`` has the cell axis first; any trailing shape is carried through.
    """
    values = np.asarray(values, dtype=float)
    if values.shape[0] != part.n:
        raise InvalidArgument(
            f"field has {values.shape[0]} cells but partition covers {part.n}")
    flat = values.reshape(part.n, -1)
    w = part.areas[:, None] * flat
    out = np.zeros((part.m, flat.shape[1]))
    np.add.at(out, part.labels, w)
    out /= part.unit_areas[:, None]
    # single-cell units are copied so that they reproduce the field exactly
    single = part.unit_sizes[part.labels] == 1
    out[part.labels[single]] = flat[single]
    return out.reshape((part.m,) + values.shape[1:])


def _intra_unit_components(labels, grid):
    e = grid.edges
    keep = labels[e[:, 0]] == labels[e[:, 1]]
    e = e[keep]
    n = grid.n
    g = sparse.csr_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    return connected_components(g, directed=False)


def check_contiguity(part, grid):
    """Boolean per unit: do its cells induce a connected subgraph?"""
    if part.n != grid.n:
        raise InvalidArgument("partition and grid sizes differ")
    _, comp = _intra_unit_components(np.asarray(part.labels), grid)
    pairs = np.unique(np.stack([part.labels, comp], axis=1), axis=0)
    ncomp = np.bincount(pairs[:, 0], minlength=part.m)
    return ncomp == 1


def split_disconnected(part, grid):
    """Split every unit into its connected components.

    Units keep their relative order; extra components are numbered after
    the component holding the unit's lowest cell index.
    """
    _, comp = _intra_unit_components(np.asarray(part.labels), grid)
    # order components by (unit label, first cell index)
    first = {}
    for c, (lab, cid) in enumerate(zip(part.labels, comp)):
        first.setdefault(cid, (lab, c))
    order = sorted(first, key=lambda cid: first[cid])
    remap = {cid: k for k, cid in enumerate(order)}
    labels = np.fromiter((remap[c] for c in comp), dtype=np.int64, count=len(comp))
    return make_partition(labels, grid, relabel=False)
