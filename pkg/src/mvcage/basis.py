"""Generating basis functions and their Obled-Creutin orthonormalization.

Integrals over the domain are grid quadratures: ``int f g ~ sum_c |B_c| f(c) g(c)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import InvalidArgument, RankDeficient, UnsupportedDomain


@dataclass(frozen=True, eq=False)
class BasisSet:
    kind: str
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise InvalidArgument("basis values must be an (n, M) matrix")
        if not np.all(np.isfinite(v)):
            raise InvalidArgument("basis values must be finite")
        if np.any(np.all(v == 0, axis=0)):
            raise InvalidArgument("basis has an identically zero column")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def size(self):
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class OcBasis:
    """Orthonormalized basis ``values = theta @ transform`` with ``gram`` = W."""

    kind: str
    values: np.ndarray
    transform: np.ndarray
    gram: np.ndarray
    dropped: int = 0

    @property
    def size(self):
        return self.values.shape[1]


def fourier_basis(grid, K):
    """Constant plus sine/cosine pairs at integer frequencies 1..K.

    Columns are ordered ``1, sin(2 pi s), cos(2 pi s), sin(4 pi s), ...`` with
    ``s`` the cell center mapped onto [0, 1].
    """
    if grid.dim != 1:
        raise UnsupportedDomain("Fourier basis is defined on 1-D domains only")
    if int(K) != K or K < 1:
        raise InvalidArgument("K must be a positive integer")
    lo, hi = grid.bbox[0]
    s = (grid.centers[:, 0] - lo) / (hi - lo)
    cols = [np.ones_like(s)]
    for k in range(1, int(K) + 1):
        cols.append(np.sin(2 * np.pi * k * s))
        cols.append(np.cos(2 * np.pi * k * s))
    return BasisSet("fourier", np.column_stack(cols), {"K": int(K)})


def regular_knots(grid, counts):
    """Knots at the centers of a coarse regular lattice over the grid bbox."""
    counts = np.atleast_1d(counts)
    if counts.shape != (grid.dim,):
        raise InvalidArgument("need one knot count per axis")
    axes = []
    for (lo, hi), c in zip(grid.bbox, counts):
        w = (hi - lo) / c
        axes.append(lo + w * (np.arange(c) + 0.5))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def default_bandwidth(knots):
    """1.5 times the median nearest-neighbor spacing of the distinct knots."""
    uk = np.unique(knots, axis=0)
    if len(uk) < 2:
        return None
    d = np.sqrt(((uk[:, None, :] - uk[None, :, :]) ** 2).sum(-1))
    np.fill_diagonal(d, np.inf)
    return 1.5 * float(np.median(d.min(axis=1)))


def gaussian_rbf_basis(grid, knots, bandwidth=None):
    """Columns ``exp(-|s - r_k|^2 / (2 bandwidth^2))`` for each knot ``r_k``."""
    knots = np.asarray(knots, dtype=float)
    if knots.ndim == 1:
        knots = knots[:, None]
    if len(knots) == 0:
        raise InvalidArgument("need at least one knot")
    if knots.shape[1] != grid.dim:
        raise InvalidArgument("knot dimension does not match grid")
    if bandwidth is None:
        bandwidth = default_bandwidth(knots)
        if bandwidth is None:
            bandwidth = 0.25 * float(np.linalg.norm(grid.bbox[:, 1] - grid.bbox[:, 0]))
    if not bandwidth > 0:
        raise InvalidArgument("bandwidth must be positive")
    ndup = len(knots) - len(np.unique(knots, axis=0))
    if ndup:
        warnings.warn(f"{ndup} duplicate knot(s): Gram matrix will be singular", stacklevel=2)
    d2 = ((grid.centers[:, None, :] - knots[None, :, :]) ** 2).sum(-1)
    vals = np.exp(-d2 / (2.0 * bandwidth ** 2))
    return BasisSet("gaussian_rbf", vals,
                    {"knots": knots.tolist(), "bandwidth": float(bandwidth),
                     "duplicate_knots": int(ndup)})


def gram_matrix(basis, grid):
    theta = basis.values if isinstance(basis, (BasisSet, OcBasis)) else np.asarray(basis)
    if theta.shape[0] != grid.n:
        raise InvalidArgument("basis rows do not match grid cells")
    W = (theta * grid.areas[:, None]).T @ theta
    return 0.5 * (W + W.T)


def _inv_lower_transpose(W):
    L = np.linalg.cholesky(W)
    return solve_triangular(L, np.eye(len(W)), lower=True).T


def oc_orthogonalize(basis, grid, rank_tol=1e-10, strict=False):
    """Obled-Creutin reweighting ``Psi = Theta Q`` with ``W^-1 = Q Q^T``.

    ``Q`` is the inverse transpose of the lower Cholesky factor of the Gram
    matrix W. When W has eigenvalues below ``rank_tol`` times its largest,
    those directions are dropped (``Q`` then spans the retained eigenvectors
    of W, scaled by ``lambda^-1/2``); ``strict=True`` raises instead.
    One Cholesky re-orthonormalization pass removes the rounding error
    inherited from an ill-conditioned W.
    """
    W = gram_matrix(basis, grid)
    lam, vec = np.linalg.eigh(W)
    lmax = lam[-1]
    if lmax <= 0:
        raise RankDeficient("Gram matrix is zero")
    keep = lam > rank_tol * lmax
    dropped = int((~keep).sum())
    if dropped == 0:
        Q = _inv_lower_transpose(W)
    elif strict:
        raise RankDeficient(
            f"Gram matrix is rank deficient: {dropped} eigenvalue(s) below "
            f"{rank_tol:g} x largest")
    else:
        order = np.argsort(lam[keep])[::-1]
        Q = vec[:, keep][:, order] / np.sqrt(lam[keep][order])
    psi = basis.values @ Q
    W2 = gram_matrix(psi, grid)
    if np.abs(W2 - np.eye(len(W2))).max() > 1e-14:
        R = _inv_lower_transpose(W2)
        Q = Q @ R
        psi = basis.values @ Q
    psi.setflags(write=False)
    return OcBasis(basis.kind, psi, Q, W, dropped)
