"""Matérn / cross-Matérn covariances, empirical covariance from replications,
and Gaussian-process simulation on a grid."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import kve

from .errors import (FactorizationFailure, InsufficientReplications,
                     InvalidArgument, InvalidCovariance, ModelInvalid)

_PSD_RTOL = 1e-8


def _half_integer_matern(x, nu):
    if nu == 0.5:
        return np.exp(-x)
    if nu == 1.5:
        return (1.0 + x) * np.exp(-x)
    if nu == 2.5:
        return (1.0 + x + x * x / 3.0) * np.exp(-x)
    return None


def matern_kernel(d, nu, a, closed_form=True):
    """Matérn correlation ``2^(1-nu)/Gamma(nu) (a d)^nu K_nu(a d)``.

    Parameters
    ----------
    d : array_like
        Non-negative distances.
    nu, a : float
        Smoothness and inverse range, both positive.
    closed_form : bool
        Use the exponential-polynomial forms for nu in {1/2, 3/2, 5/2}.
        Disable to force the Bessel evaluation (used to cross-check both).
    """
    d = np.asarray(d, dtype=float)
    if not (np.isfinite(nu) and np.isfinite(a)) or np.any(np.isnan(d)):
        raise InvalidArgument("matern_kernel received NaN/inf input")
    if nu <= 0 or a <= 0:
        raise InvalidArgument("Matérn nu and a must be strictly positive")
    if np.any(d < 0):
        raise InvalidArgument("distances must be non-negative")
    x = a * d
    out = np.ones_like(x)
    pos = x > 0
    if not np.any(pos):
        return out
    xp = x[pos]
    val = _half_integer_matern(xp, nu) if closed_form else None
    if val is None:
        logv = ((1.0 - nu) * math.log(2.0) - math.lgamma(nu) + nu * np.log(xp)
                + np.log(kve(nu, xp)) - xp)
        val = np.minimum(np.exp(logv), 1.0)
    out[pos] = val
    return out


@dataclass(frozen=True)
class MaternParams:
    nu: float
    a: float
    sigma2: float = 1.0

    def __post_init__(self):
        if not (self.nu > 0 and self.a > 0):
            raise InvalidArgument("Matérn nu and a must be strictly positive")
        if not self.sigma2 >= 0:
            raise InvalidArgument("Matérn sigma2 must be non-negative")


def _probe_min_eig(p1, p2, nu12, a12, rho):
    amax = max(p1.a, p2.a, a12)
    amin = min(p1.a, p2.a, a12)
    worst = np.inf
    for spacing in (0.2 / amax, 0.25 / amin):
        s = spacing * np.arange(128.0)
        d = np.abs(s[:, None] - s[None, :])
        c11 = p1.sigma2 * matern_kernel(d, p1.nu, p1.a)
        c22 = p2.sigma2 * matern_kernel(d, p2.nu, p2.a)
        c12 = rho * math.sqrt(p1.sigma2 * p2.sigma2) * matern_kernel(d, nu12, a12)
        full = np.block([[c11, c12], [c12.T, c22]])
        scale = max(p1.sigma2, p2.sigma2, 1e-300)
        worst = min(worst, np.linalg.eigvalsh(full)[0] / scale)
    return worst


@dataclass(frozen=True)
class BivariateMaternParams:
    """Full bivariate Matérn model.

    Missing cross parameters default to ``a12 = 1.2 max(a1, a2)`` and
    ``nu12 = (nu1 + nu2) / 2``. Admissibility is checked numerically on two
    1-D probe lattices (fine and coarse relative to the ranges); an
    indefinite probe matrix raises :class:`ModelInvalid`.
    """

    p1: MaternParams
    p2: MaternParams
    nu12: float | None = None
    a12: float | None = None
    rho: float = 0.5

    def __post_init__(self):
        if self.nu12 is None:
            object.__setattr__(self, "nu12", 0.5 * (self.p1.nu + self.p2.nu))
        if self.a12 is None:
            object.__setattr__(self, "a12", 1.2 * max(self.p1.a, self.p2.a))
        if not -1.0 <= self.rho <= 1.0:
            raise InvalidArgument("rho must lie in [-1, 1]")
        if not (self.nu12 > 0 and self.a12 > 0):
            raise InvalidArgument("cross smoothness and inverse range must be positive")
        lam = _probe_min_eig(self.p1, self.p2, self.nu12, self.a12, self.rho)
        if lam < -_PSD_RTOL:
            raise ModelInvalid(
                f"bivariate Matérn parameters are not admissible: probe matrix has "
                f"minimum eigenvalue {lam:.3e} (relative to max variance); "
                f"reduce |rho| or change (nu12, a12)", min_eigenvalue=lam)

    @classmethod
    def simulation_defaults(cls, rho=0.5, sigma2=(1.0, 1.0)):
        """Ranges and smoothness of the bivariate simulation study:
        a = (10, 15), nu = (0.4, 0.5), derived cross terms."""
        return cls(MaternParams(0.4, 10.0, sigma2[0]), MaternParams(0.5, 15.0, sigma2[1]),
                   rho=rho)

    def to_dict(self):
        return {"p1": vars(self.p1).copy(), "p2": vars(self.p2).copy(),
                "nu12": self.nu12, "a12": self.a12, "rho": self.rho}

    @classmethod
    def from_dict(cls, d):
        return cls(MaternParams(**d["p1"]), MaternParams(**d["p2"]),
                   nu12=d.get("nu12"), a12=d.get("a12"), rho=d.get("rho", 0.5))


@dataclass(frozen=True, eq=False)
class JointCovariance:
    """Block covariance over grid cells: ``blocks[i, j]`` is the n x n matrix C_ij."""

    blocks: np.ndarray
    source: str = "parametric"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        b = np.array(self.blocks, dtype=float)
        if b.ndim != 4 or b.shape[0] != b.shape[1] or b.shape[2] != b.shape[3]:
            raise InvalidCovariance("blocks must have shape (N, N, n, n)")
        scale = max(1.0, float(np.abs(b).max()) if b.size else 1.0)
        asym = np.abs(b - b.transpose(1, 0, 3, 2)).max() if b.size else 0.0
        if asym > 1e-10 * scale:
            raise InvalidCovariance(f"joint covariance is not symmetric (max deviation {asym:.2e})")
        b.setflags(write=False)
        object.__setattr__(self, "blocks", b)

    @property
    def N(self):
        return self.blocks.shape[0]

    @property
    def n(self):
        return self.blocks.shape[2]

    def block(self, i, j):
        return self.blocks[i, j]

    def full(self):
        N, n = self.N, self.n
        return self.blocks.transpose(0, 2, 1, 3).reshape(N * n, N * n)

    @classmethod
    def from_full(cls, C, N, source="parametric", meta=None):
        C = np.asarray(C, dtype=float)
        n = C.shape[0] // N
        if C.shape != (N * n, N * n):
            raise InvalidCovariance("full matrix size is not a multiple of N")
        blocks = C.reshape(N, n, N, n).transpose(0, 2, 1, 3)
        return cls(blocks, source, dict(meta or {}))

    def min_eigenvalue(self):
        return float(np.linalg.eigvalsh(self.full())[0])

    def check_psd(self, rtol=_PSD_RTOL):
        lam = self.min_eigenvalue()
        maxdiag = float(np.max(np.diagonal(self.full())))
        if lam < -rtol * max(maxdiag, 1e-300):
            raise ModelInvalid(f"joint covariance is indefinite (minimum eigenvalue {lam:.3e})",
                               min_eigenvalue=lam)
        return lam

    def rescale(self, scales):
        """Covariance of ``diag(scales) y``: block (i, j) times s_i s_j."""
        s = np.asarray(scales, dtype=float)
        return JointCovariance(self.blocks * (s[:, None] * s[None, :])[:, :, None, None],
                               self.source, dict(self.meta))


def pairwise_distances(points):
    p = np.asarray(points, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    diff = p[:, None, :] - p[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def _kernel_on_distances(d, nu, a):
    # evaluate on unique (rounded) distances, then scatter back
    key = np.round(d, 12)
    uniq, inv = np.unique(key, return_inverse=True)
    return matern_kernel(uniq, nu, a)[inv].reshape(d.shape)


def build_joint_cov(grid, params, check="auto"):
    """Bivariate Matérn joint covariance evaluated at the grid cell centers.

    ``check`` controls the dense PSD check: ``True``, ``False`` or ``"auto"``
    (only when the joint matrix has at most 4000 rows).
    """
    d = pairwise_distances(grid.centers)
    p = (params.p1, params.p2)
    n = grid.n
    blocks = np.empty((2, 2, n, n))
    for i in range(2):
        blocks[i, i] = p[i].sigma2 * _kernel_on_distances(d, p[i].nu, p[i].a)
    cross = params.rho * math.sqrt(p[0].sigma2 * p[1].sigma2) * _kernel_on_distances(
        d, params.nu12, params.a12)
    blocks[0, 1] = cross
    blocks[1, 0] = cross.T
    cov = JointCovariance(blocks, "parametric", {"params": params.to_dict()})
    if check is True or (check == "auto" and 2 * n <= 4000):
        cov.check_psd()
    return cov


def empirical_cross_cov(data, centered=False):
    """Empirical joint covariance from replications.

    ``data`` has shape (r, n, N). The divisor is r (not r - 1). With
    ``centered=True`` the data are taken as zero-mean and no sample mean is
    removed.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 3:
        raise InvalidArgument("replicated data must have shape (r, n, N)")
    r, n, N = data.shape
    if r < 2:
        raise InsufficientReplications(f"need at least 2 replications, got {r}")
    if not np.all(np.isfinite(data)):
        raise InvalidArgument("replicated data contain missing or non-finite values")
    x = data if centered else data - data.mean(axis=0)
    x = x.transpose(0, 2, 1).reshape(r, N * n)
    C = x.T @ x / r
    C = 0.5 * (C + C.T)
    return JointCovariance.from_full(C, N, source="empirical", meta={"replications": r})


def psd_factor(C, max_jitter=1e-6):
    """Lower Cholesky factor of C, adding jitter 1e-10, 1e-9, ... up to
    ``max_jitter`` times the largest diagonal entry when needed.

    Returns the factor and the relative jitter that was applied.
    """
    C = np.asarray(C, dtype=float)
    scale = float(np.max(np.diag(C))) if C.size else 1.0
    scale = scale if scale > 0 else 1.0
    jitter = 0.0
    while True:
        try:
            return np.linalg.cholesky(C + jitter * scale * np.eye(len(C))), jitter
        except np.linalg.LinAlgError:
            jitter = 1e-10 if jitter == 0.0 else jitter * 10.0
            if jitter > max_jitter * (1 + 1e-9):
                raise FactorizationFailure(
                    f"Cholesky failed even with jitter {max_jitter:g} x max diagonal")


def simulate_gp(cov, r, seed, batch_size=256):
    """Zero-mean Gaussian replications with covariance ``cov``.

    Returns an array of shape (r, n, N). Batch ``b`` draws its normals from
    the stream seeded by ``(seed, b)``, so output depends only on ``seed``,
    ``r`` and ``batch_size``.
    """
    if r < 1:
        raise InvalidArgument("replication count must be >= 1")
    L, _ = psd_factor(cov.full())
    N, n = cov.N, cov.n
    out = np.empty((r, n, N))
    for b, lo in enumerate(range(0, r, batch_size)):
        size = min(batch_size, r - lo)
        rng = np.random.default_rng([int(seed), b])
        z = rng.standard_normal((size, N * n))
        y = z @ L.T
        out[lo:lo + size] = y.reshape(size, N, n).transpose(0, 2, 1)
    return out
