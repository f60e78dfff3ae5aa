"""Univariate and multivariate Karhunen-Loève eigensystems on a grid.

All Fredholm integrals are area-weighted grid quadratures, so an
eigenfunction ``psi`` is orthonormal when ``psi.T @ diag(areas) @ psi = I``.

Sign convention: every eigenfunction (stacked over processes for the
multivariate case) has its largest-magnitude entry positive, taking the
first such entry when several tie within rounding. Eigenvalues
that tie within rounding define a subspace only; compare projectors, not
columns, in that case.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covariance import JointCovariance
from .errors import (InconsistentEigensystem, IndefiniteScoreCovariance, InsufficientReplications,
                     InvalidArgument, InvalidCovariance)
from .geometry import aggregation_matrix, areal_average

TRUNCATION_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class UnivariateEigenSystem:
    process: int
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    coefficients: np.ndarray

    @property
    def M(self):
        return len(self.eigenvalues)


@dataclass(frozen=True, eq=False)
class ScoreCovariance:
    matrix: np.ndarray
    sizes: tuple

    def block(self, i, j):
        o = np.concatenate([[0], np.cumsum(self.sizes)])
        return self.matrix[o[i]:o[i + 1], o[j]:o[j + 1]]


@dataclass(frozen=True, eq=False)
class MultivariateEigenSystem:
    """Eigenvalues (M,) and vector eigenfunctions stored as (N, n, M).

    ``mixing`` holds the eigenvectors e_k of the coefficient covariance
    (rows blocked by ``sizes``); it is ``None`` for dense plug-in systems.
    """

    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    provenance: str
    mixing: np.ndarray | None = None
    sizes: tuple | None = None

    @property
    def N(self):
        return self.eigenfunctions.shape[0]

    @property
    def n(self):
        return self.eigenfunctions.shape[1]

    @property
    def M(self):
        return len(self.eigenvalues)

    def process(self, j):
        return self.eigenfunctions[j]

    def truncate(self, M_use):
        if not 1 <= M_use <= self.M:
            raise InvalidArgument(f"truncation must lie in [1, {self.M}]")
        mix = None if self.mixing is None else self.mixing[:, :M_use]
        return MultivariateEigenSystem(self.eigenvalues[:M_use],
                                       self.eigenfunctions[:, :, :M_use],
                                       self.provenance, mix, self.sizes)

    def point_table(self):
        """(n, M, N) view used for aggregation."""
        return self.eigenfunctions.transpose(1, 2, 0)


def _sorted_eigh(S):
    lam, vec = np.linalg.eigh(0.5 * (S + S.T))
    return lam[::-1], vec[:, ::-1]


def _keep_count(lam, M, tol):
    if M is not None:
        if not 1 <= M <= len(lam):
            raise InvalidArgument(f"truncation M={M} outside [1, {len(lam)}]")
        return int(M)
    if lam[0] <= 0:
        return 1
    return max(1, int(np.sum(lam >= tol * lam[0])))


def _sign_fix(stacked, *others):
    # first entry within rounding of the column max, so mirrored ties are stable
    a = np.abs(stacked)
    idx = np.argmax(a >= a.max(axis=0) * (1.0 - 1e-8), axis=0)
    sgn = np.sign(stacked[idx, np.arange(stacked.shape[1])])
    sgn[sgn == 0] = 1.0
    return [a * sgn for a in (stacked,) + others]


def univariate_kle_galerkin(C, oc, grid, M=None, tol=TRUNCATION_RTOL, process=0):
    """Galerkin KLE of one process on an orthonormal basis.

    Projects the covariance onto the basis (``U = Psi^T A C A Psi``),
    eigendecomposes U and maps eigenvectors back to grid eigenfunctions.
    """
    C = np.asarray(C, dtype=float)
    if C.shape != (grid.n, grid.n):
        raise InvalidArgument("covariance size does not match grid")
    scale = max(1.0, float(np.abs(C).max()))
    if np.abs(C - C.T).max() > 1e-8 * scale:
        raise InvalidCovariance("covariance matrix is not symmetric")
    B = oc.values * grid.areas[:, None]
    U = B.T @ C @ B
    lam, F = _sorted_eigh(U)
    keep = _keep_count(lam, M, tol)
    lam, F = lam[:keep], F[:, :keep]
    if lam[-1] < -1e-8 * max(lam[0], 0.0):
        raise InvalidCovariance(f"covariance is indefinite (eigenvalue {lam[-1]:.3e})")
    lam = np.where(lam < 0, 0.0, lam)
    psi = oc.values @ F
    psi, F = _sign_fix(psi, F)
    return UnivariateEigenSystem(process, lam, psi, F)


def score_cov(C, systems, grid, validate=True):
    """Covariance of the univariate KLE scores across processes.

    ``K_ij = Psi_i^T A C_ij A Psi_j``. The diagonal blocks must reproduce the
    univariate eigenvalues; a mismatch means the eigensystems were not built
    from this covariance.
    """
    if len(systems) != C.N:
        raise InvalidArgument("need one univariate eigensystem per process")
    P = [s.eigenfunctions * grid.areas[:, None] for s in systems]
    if any(p.shape[0] != C.n for p in P):
        raise InvalidArgument("eigensystems and covariance live on different grids")
    sizes = tuple(p.shape[1] for p in P)
    rows = [np.hstack([P[i].T @ C.block(i, j) @ P[j] for j in range(C.N)])
            for i in range(C.N)]
    K = np.vstack(rows)
    K = 0.5 * (K + K.T)
    out = ScoreCovariance(K, sizes)
    if validate:
        for j, s in enumerate(systems):
            Kjj = out.block(j, j)
            lam1 = max(float(s.eigenvalues[0]), 1e-300)
            off = np.abs(Kjj - np.diag(np.diag(Kjj))).max() if len(Kjj) > 1 else 0.0
            dev = np.abs(np.diag(Kjj) - s.eigenvalues).max()
            if off > 1e-6 * lam1 or dev > 1e-6 * lam1:
                raise InconsistentEigensystem(
                    f"score covariance block {j} is not diag(eigenvalues) "
                    f"(off-diagonal {off:.2e}, diagonal deviation {dev:.2e})")
    return out


def _assemble(S, bases, provenance, M, tol):
    lam, E = _sorted_eigh(S)
    if lam[-1] < -1e-8 * max(lam[0], 1e-300):
        raise IndefiniteScoreCovariance(
            f"coefficient covariance is indefinite (minimum eigenvalue {lam[-1]:.3e})")
    keep = _keep_count(lam, M, tol)
    lam, E = np.maximum(lam[:keep], 0.0), E[:, :keep]
    sizes = tuple(b.shape[1] for b in bases)
    offs = np.concatenate([[0], np.cumsum(sizes)])
    funcs = np.stack([bases[j] @ E[offs[j]:offs[j + 1]] for j in range(len(bases))])
    N, n, Mk = funcs.shape
    stacked, E = _sign_fix(funcs.reshape(N * n, Mk), E)
    return MultivariateEigenSystem(lam, stacked.reshape(N, n, Mk), provenance, E, sizes)


def multivariate_eigensystem(K, systems, M=None, tol=TRUNCATION_RTOL):
    """Multivariate eigenpairs from the score covariance and univariate systems:
    ``[psi_k]_j = (psi_j1, ..., psi_jMj) e_k^j``."""
    if tuple(s.M for s in systems) != tuple(K.sizes):
        raise InvalidArgument("score covariance blocks do not match the eigensystems")
    return _assemble(K.matrix, [s.eigenfunctions for s in systems], "score-cov", M, tol)


def posterior_eof_eigensystem(sigma_hat, ocs, M=None, tol=TRUNCATION_RTOL,
                              provenance="posterior-EOF"):
    """Eigenpairs of a coefficient covariance over per-process OC bases."""
    sigma_hat = np.asarray(sigma_hat, dtype=float)
    total = sum(o.size for o in ocs)
    if sigma_hat.shape != (total, total):
        raise InvalidArgument(
            f"coefficient covariance is {sigma_hat.shape}, OC blocks total {total}")
    scale = max(1.0, float(np.abs(sigma_hat).max()))
    if np.abs(sigma_hat - sigma_hat.T).max() > 1e-8 * scale:
        raise InvalidArgument("coefficient covariance must be symmetric")
    return _assemble(sigma_hat, [o.values for o in ocs], provenance, M, tol)


def dense_eigensystem(cov, grid, M=None, tol=TRUNCATION_RTOL):
    """Eigenpairs of the discretized joint covariance operator on the grid.

    Solves the symmetric problem ``A^1/2 C A^1/2 u = lambda u`` and returns
    ``psi = A^-1/2 u``. This is the plug-in system with M up to n N.
    """
    N, n = cov.N, cov.n
    if n != grid.n:
        raise InvalidArgument("covariance and grid sizes differ")
    ra = np.sqrt(np.tile(grid.areas, N))
    S = ra[:, None] * cov.full() * ra[None, :]
    lam, U = _sorted_eigh(S)
    if lam[-1] < -1e-8 * max(lam[0], 1e-300):
        raise InvalidCovariance(f"joint covariance is indefinite ({lam[-1]:.3e})")
    keep = _keep_count(lam, M, tol)
    lam = np.maximum(lam[:keep], 0.0)
    psi = U[:, :keep] / ra[:, None]
    (psi,) = _sign_fix(psi)
    return MultivariateEigenSystem(lam, psi.reshape(N, n, keep), "plug-in")


def as_multivariate(sys_j):
    """Wrap a univariate system as an N = 1 multivariate one."""
    return MultivariateEigenSystem(sys_j.eigenvalues, sys_j.eigenfunctions[None],
                                   "univariate", np.eye(sys_j.M), (sys_j.M,))


def mercer_reconstruct(sys, M_use=None):
    """Joint covariance ``sum_k lambda_k psi_k(s) psi_k(r)^T`` over the first
    ``M_use`` eigenpairs."""
    if M_use is not None:
        sys = sys.truncate(M_use)
    lam = sys.eigenvalues
    F = sys.eigenfunctions.reshape(sys.N * sys.n, sys.M)
    full = (F * lam) @ F.T
    full = 0.5 * (full + full.T)
    return JointCovariance.from_full(full, sys.N, source="mercer")


def areal_eigensystem(sys, part):
    """Areal eigenfunction table of shape (m, M, N): unit means of [psi_k]_j."""
    if part.n != sys.n:
        raise InvalidArgument("partition and eigensystem grids differ")
    return areal_average(sys.point_table(), part)


def areal_covariance(sys, part):
    """Unit-level covariance ``sum_k lambda_k psi_k^A(A_i) psi_k^A(A_j)^T``."""
    tab = areal_eigensystem(sys, part)
    m, M, N = tab.shape
    flat = tab.transpose(2, 0, 1).reshape(N * m, M)
    full = (flat * sys.eigenvalues) @ flat.T
    return JointCovariance.from_full(0.5 * (full + full.T), N, source="areal")


def areal_cov_direct(cov, part):
    """Unit-level covariance by double averaging the point covariance."""
    G = aggregation_matrix(part)
    blocks = np.einsum("ac,ijcd,bd->ijab", G, cov.blocks, G)
    blocks = 0.5 * (blocks + blocks.transpose(1, 0, 3, 2))
    return JointCovariance(blocks, source="areal")


def kle_scores(fields, sys, grid):
    """Expansion coefficients ``alpha_k = sum_j int Y_j psi_kj`` for each
    replication in ``fields`` (shape (r, n, N)); returns (r, M)."""
    fields = np.asarray(fields, dtype=float)
    if fields.ndim == 2:
        fields = fields[None]
    w = sys.eigenfunctions * grid.areas[None, :, None]
    return np.einsum("rnj,jnk->rk", fields, w)


def orthonormality_error(sys, grid):
    """max |sum_j Psi_j^T A Psi_j - I| for a multivariate system."""
    F = sys.eigenfunctions
    G = np.einsum("jnk,n,jnl->kl", F, grid.areas, F)
    return float(np.abs(G - np.eye(sys.M)).max())


def project_coefficients(fields, ocs, grid):
    """Per-replication OC coefficients ``nu_jk = int Z_j psi_jk`` as a list of
    (r, M_j) arrays, one per process. ``fields`` has shape (r, n, N)."""
    fields = np.asarray(fields, dtype=float)
    if fields.ndim == 2:
        fields = fields[None]
    if fields.shape[1] != grid.n or fields.shape[2] != len(ocs):
        raise InvalidArgument("fields must be (r, n, N) with one OC basis per process")
    return [(fields[:, :, j] * grid.areas) @ oc.values for j, oc in enumerate(ocs)]


def empirical_coefficient_eigensystem(fields, ocs, grid, M=None, tol=TRUNCATION_RTOL):
    """Low-rank empirical system from replicated data.

    Projects every replication onto the OC bases, forms the coefficient
    covariance with divisor r and decorrelates it.
    """
    coefs = np.hstack(project_coefficients(fields, ocs, grid))
    r = coefs.shape[0]
    if r < 2:
        raise InsufficientReplications("need at least 2 replications")
    centered = coefs - coefs.mean(axis=0)
    S = centered.T @ centered / r
    return posterior_eof_eigensystem(0.5 * (S + S.T), ocs, M, tol, provenance="empirical")
