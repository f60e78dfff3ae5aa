"""Two-stage regionalization: Ward clustering proposes candidate partitions,
the aggregation-error criterion scores them, and a relative-change rule
picks the number of units.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cage import dmvcage, posterior_mvcage
from .errors import ConfigError, InvalidArgument
from .geometry import make_partition, split_disconnected


@dataclass(frozen=True)
class RegionalizeConfig:
    """Settings for the stopping loop.

    ``features`` selects the clustering space: ``"process"`` (per-cell process
    estimates) or ``"kle"`` (eigenvalue-weighted eigenfunction coordinates).
    """

    gamma: float = 0.5
    epsilon: float = 1e-4
    j_min: int | None = None
    j_max: int | None = None
    enforce_contiguity: bool = True
    features: str = "process"
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.j_min is not None and self.j_min < 1:
            raise ConfigError("j_min must be >= 1")
        if self.j_max is not None and self.j_max < 1:
            raise ConfigError("j_max must be >= 1")
        if self.j_min is not None and self.j_max is not None and self.j_min > self.j_max:
            raise ConfigError("j_min must not exceed j_max")
        if self.features not in ("process", "kle"):
            raise ConfigError("features must be 'process' or 'kle'")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")


@dataclass(frozen=True, eq=False)
class Dendrogram:
    """Merge sequence in scipy linkage conventions.

    ``merges[i]`` joins clusters with ids ``< n + i`` (leaves are ``0..n-1``,
    the cluster formed at step i gets id ``n + i``). ``costs`` are Ward
    increases of the within-cluster sum of squares and
    ``heights = sqrt(2 * costs)``.
    """

    merges: np.ndarray
    costs: np.ndarray
    sizes: np.ndarray
    n: int

    @property
    def heights(self):
        return np.sqrt(2.0 * self.costs)

    @property
    def linkage(self):
        return np.column_stack([self.merges.astype(float), self.heights,
                                self.sizes.astype(float)])


@dataclass(frozen=True, eq=False)
class RegionalizationResult:
    """``trace`` rows are (j requested, units after repair, total, weighted total)."""

    partition: object
    trace: list
    reason: str
    selected_j: int
    report: object = None
    meta: dict = field(default_factory=dict)

    def trace_array(self):
        return np.array(self.trace, dtype=float).reshape(-1, 4)


def _standardize(X):
    X = np.asarray(X, dtype=float)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    return (X - X.mean(axis=0)) / sd


def feature_matrix(estimates, grid, gamma=0.5, standardize=True):
    """Per-cell features ``(gamma * y(s), (1 - gamma) * s)`` after per-column
    standardization to zero mean and unit variance."""
    Y = np.asarray(estimates, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] != grid.n:
        raise InvalidArgument("estimates do not match the grid")
    if not np.all(np.isfinite(Y)):
        raise InvalidArgument("estimates must be finite")
    S = grid.centers
    if standardize:
        Y, S = _standardize(Y), _standardize(S)
    return np.hstack([gamma * Y, (1.0 - gamma) * S])


def kle_coordinates(sys):
    """Columns ``sqrt(lambda_k) [psi_k]_j`` scaled as a block so that the
    column variances sum to N. On equal-area cells the squared Euclidean
    spread of these rows within a unit is proportional to the unit's
    squared-loss criterion times its cell count, with one constant for all
    units."""
    F = sys.point_table() * np.sqrt(sys.eigenvalues)[None, :, None]
    F = F.reshape(sys.n, -1)
    F = F - F.mean(axis=0)
    tv = float((F ** 2).sum() / sys.n)
    return F * np.sqrt(sys.N / tv) if tv > 0 else F


def kle_feature_matrix(sys, grid, gamma=0.5):
    """Blend of :func:`kle_coordinates` and standardized coordinates."""
    return np.hstack([gamma * kle_coordinates(sys), (1.0 - gamma) * _standardize(grid.centers)])


def ward_hgc(features):
    """Ward agglomerative clustering by nearest-neighbour chains.

    The merge cost of clusters A and B is
    ``|A||B| / (|A| + |B|) * ||c_A - c_B||^2``. Ties go to the earlier
    chain element, then to the lower cluster id.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if n < 2:
        raise InvalidArgument("need at least 2 cells to cluster")
    if not np.all(np.isfinite(X)):
        raise InvalidArgument("features must be finite")
    cap = 2 * n - 1
    cent = np.empty((cap, X.shape[1]))
    cent[:n] = X
    size = np.zeros(cap)
    size[:n] = 1
    active = np.zeros(cap, dtype=bool)
    active[:n] = True
    raw = []
    chain = []
    nxt = n
    while nxt < cap:
        if not chain:
            chain.append(int(np.flatnonzero(active)[0]))
        a = chain[-1]
        ids = np.flatnonzero(active)
        ids = ids[ids != a]
        diff = cent[ids] - cent[a]
        d = size[a] * size[ids] / (size[a] + size[ids]) * np.einsum("ij,ij->i", diff, diff)
        k = int(np.argmin(d))
        b = int(ids[k])
        if len(chain) > 1:
            prev = chain[-2]
            dprev = d[np.searchsorted(ids, prev)]
            if dprev <= d[k]:
                b = prev
        if len(chain) > 1 and b == chain[-2]:
            chain.pop()
            chain.pop()
            cost = float(d[np.searchsorted(ids, b)])
            sa, sb = size[a], size[b]
            cent[nxt] = (sa * cent[a] + sb * cent[b]) / (sa + sb)
            size[nxt] = sa + sb
            active[[a, b]] = False
            active[nxt] = True
            raw.append((min(a, b), max(a, b), cost))
            nxt += 1
        else:
            chain.append(b)
    return _relabel(raw, n)


def _relabel(raw, n):
    # sort chain merges by cost, then renumber clusters in that order
    order = sorted(range(len(raw)), key=lambda i: (raw[i][2], i))
    parent = np.arange(2 * n - 1)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    rep = {}
    for i, (a, b, _) in enumerate(raw):
        rep[n + i] = min(rep.get(a, a), rep.get(b, b))
    merges = np.empty((n - 1, 2), dtype=np.int64)
    costs = np.empty(n - 1)
    sizes = np.empty(n - 1, dtype=np.int64)
    csize = {}
    for step, i in enumerate(order):
        a, b, cost = raw[i]
        ra, rb = find(rep.get(a, a)), find(rep.get(b, b))
        x, y = sorted((ra, rb))
        merges[step] = (x, y)
        new = n + step
        parent[ra] = new
        parent[rb] = new
        csize[new] = csize.get(ra, 1) + csize.get(rb, 1)
        costs[step] = cost
        sizes[step] = csize[new]
    return Dendrogram(merges, costs, sizes, n)


def _cut_labels(d, j):
    n = d.n
    parent = np.arange(2 * n - 1)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for step in range(n - j):
        a, b = d.merges[step]
        parent[find(a)] = n + step
        parent[find(b)] = n + step
    roots = np.array([find(i) for i in range(n)])
    _, first, inv = np.unique(roots, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first)] = np.arange(len(first))
    return rank[inv]


def cut_dendrogram(d, j, grid, enforce_contiguity=False):
    """Partition with ``j`` units (numbered by their lowest cell index).

    With ``enforce_contiguity`` every disconnected unit is split into its
    connected components, so the unit count may exceed ``j``.
    """
    if not 1 <= j <= d.n:
        raise InvalidArgument(f"cut level must lie in [1, {d.n}]")
    part = make_partition(_cut_labels(d, j), grid, relabel=False)
    if enforce_contiguity and not all(part.contiguous):
        part = split_disconnected(part, grid)
    return part


def _evaluator(source, grid, loss="squared"):
    if callable(source):
        return source
    if isinstance(source, (list, tuple)):
        return lambda part: posterior_mvcage(source, None, part, grid, loss)
    return lambda part: dmvcage(source, part, grid, loss)


def regionalize(source, grid, cfg=None, features=None, estimates=None, loss="squared"):
    """Run the stopping loop over Ward cuts.

    ``source`` is an eigensystem, a list of posterior eigensystems, or a
    callable mapping a partition to a report. Clustering features are taken
    from ``features`` if given, else built from ``estimates`` (process mode)
    or from the eigensystem (kle mode).

    The loop scores ``j = max(2, j_min), j+1, ...`` and stops at the first j
    where ``(MC_{j-1} - MC_j) / MC_{j-1} < epsilon`` (the first comparison is
    at the second scored j), when ``MC_j`` is zero, at ``j_max`` or when the
    cells are exhausted. ``MC_1`` is recorded in the trace.
    """
    cfg = cfg or RegionalizeConfig()
    n = grid.n
    if features is None:
        if cfg.features == "process":
            if estimates is None:
                raise InvalidArgument("process features need per-cell estimates")
            features = feature_matrix(estimates, grid, cfg.gamma)
        else:
            sys = source[0] if isinstance(source, (list, tuple)) else source
            features = kle_feature_matrix(sys, grid, cfg.gamma)
    evaluate = _evaluator(source, grid, loss)
    dend = ward_hgc(features)

    def score(j):
        part = cut_dendrogram(dend, j, grid, cfg.enforce_contiguity)
        rep = evaluate(part)
        return j, part, rep

    whole = score(1)
    trace = [(1, whole[1].m, whole[2].total, whole[2].weighted_total)]
    j0 = max(2, cfg.j_min or 2)
    j_hi = min(n, cfg.j_max) if cfg.j_max is not None else n
    if j0 > j_hi:
        raise InvalidArgument("no admissible unit count between j_min and j_max")

    pool = ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else None
    try:
        prev = None
        j = j0
        while True:
            batch = list(range(j, min(j + cfg.threads, j_hi + 1)))
            results = list(pool.map(score, batch)) if pool else [score(b) for b in batch]
            for jj, part, rep in results:
                mc = rep.total
                trace.append((jj, part.m, mc, rep.weighted_total))
                reason = None
                if mc <= 1e-12 * max(trace[0][2], 1e-300):
                    reason = "zero"
                elif prev is not None and (prev - mc) / prev < cfg.epsilon:
                    reason = "epsilon"
                elif jj == j_hi:
                    reason = "j_max" if cfg.j_max is not None and j_hi == cfg.j_max else "exhausted"
                if reason:
                    return RegionalizationResult(part, trace, reason, jj, rep,
                                                 {"dendrogram": dend})
                prev = mc
            j = batch[-1] + 1
    finally:
        if pool:
            pool.shutdown()


def argmin_over_candidates(candidates, source, grid, loss="squared"):
    """Index of the candidate with the smallest total criterion, ties going
    to fewer units and then to the lower index. Returns (index, totals)."""
    candidates = list(candidates)
    if not candidates:
        raise InvalidArgument("need at least one candidate partition")
    evaluate = _evaluator(source, grid, loss)
    totals = np.array([evaluate(p).total for p in candidates])
    keys = [(totals[i], candidates[i].m, i) for i in range(len(candidates))]
    return min(keys)[2], totals


def regionalize_bounded(source, grid, features, j_lo, j_hi, enforce_contiguity=True,
                        loss="squared"):
    """Argmin of the total criterion over Ward cuts with ``j_lo <= j <= j_hi``."""
    if not 1 <= j_lo <= j_hi <= grid.n:
        raise InvalidArgument("need 1 <= j_lo <= j_hi <= n")
    dend = ward_hgc(features)
    cands = [cut_dendrogram(dend, j, grid, enforce_contiguity) for j in range(j_lo, j_hi + 1)]
    idx, totals = argmin_over_candidates(cands, source, grid, loss)
    trace = [(j_lo + i, c.m, float(t), float("nan")) for i, (c, t) in enumerate(zip(cands, totals))]
    return RegionalizationResult(cands[idx], trace, "argmin", j_lo + idx, None,
                                 {"dendrogram": dend})


def random_contiguous_partition(grid, m, rng):
    """Random partition into ``m`` connected units.

    Regular 1-D grids are cut at ``m - 1`` distinct random points; other
    grids grow ``m`` random seeds by random frontier expansion.
    """
    n = grid.n
    if not 1 <= m <= n:
        raise InvalidArgument("unit count must lie in [1, n]")
    if grid.dim == 1 and grid.counts is not None:
        cuts = np.sort(rng.choice(np.arange(1, n), size=m - 1, replace=False))
        labels = np.zeros(n, dtype=np.int64)
        labels[cuts] = 1
        labels = np.cumsum(labels)
        order = np.argsort(grid.centers[:, 0], kind="stable")
        out = np.empty(n, dtype=np.int64)
        out[order] = labels
        return make_partition(out, grid, relabel=False)
    labels = np.full(n, -1, dtype=np.int64)
    seeds = rng.choice(n, size=m, replace=False)
    labels[seeds] = np.arange(m)
    frontier = [set(int(v) for v in grid.neighbors(s) if labels[v] < 0) for s in seeds]
    left = n - m
    while left:
        live = [k for k in range(m) if frontier[k]]
        k = live[rng.integers(len(live))]
        cand = sorted(frontier[k])
        c = cand[rng.integers(len(cand))]
        labels[c] = k
        left -= 1
        for f in frontier:
            f.discard(c)
        frontier[k].update(int(v) for v in grid.neighbors(c) if labels[v] < 0)
    return make_partition(labels, grid)
