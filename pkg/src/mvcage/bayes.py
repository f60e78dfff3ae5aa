"""Basis-function model with a g-prior and its block Gibbs sampler.

For each process j and replication k the model is
``z_jk = mu_j + Phi_j nu_jk + eps``, ``eps ~ N(0, sigma2_j I)``, with
``nu_jk | sigma2_j ~ N(0, g sigma2_j (Phi_j^T Phi_j)^-1)``, a flat prior on
``mu_j`` and an inverse-gamma prior on ``sigma2_j`` (Jeffreys when both
hyperparameters are zero). Replications share ``mu_j`` and ``sigma2_j``.

Processes are conditionally independent given the prior, so each one is
fitted on its own observed cells (NaN marks a missing value). Least-squares
fits centre the data on the pooled observed mean of the process, which is
the data mean when there is a single replication.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (ConfigError, DegeneratePosterior, InsufficientDraws,
                     InvalidArgument, RankDeficient)


@dataclass(frozen=True)
class ModelConfig:
    """Prior and sampler schedule. ``g=None`` sets g to the number of observed
    cells of each process."""

    g: float | None = None
    a_sigma: float = 0.0
    b_sigma: float = 0.0
    n_iter: int = 5000
    n_burn: int = 1000
    thin: int = 4
    seed: int = 0
    chain: int = 0
    init: str = "conditional"

    def __post_init__(self):
        if self.g is not None and not self.g > 0:
            raise ConfigError("g must be positive")
        if self.a_sigma < 0 or self.b_sigma < 0:
            raise ConfigError("inverse-gamma hyperparameters must be non-negative")
        if not (isinstance(self.n_iter, (int, np.integer)) and self.n_iter > 0):
            raise ConfigError("n_iter must be a positive integer")
        if not 0 <= self.n_burn < self.n_iter:
            raise ConfigError("need 0 <= n_burn < n_iter")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        if self.init not in ("conditional", "random"):
            raise ConfigError("init must be 'conditional' or 'random'")

    @property
    def n_draws(self):
        return len(range(self.n_burn, self.n_iter, self.thin))


@dataclass(frozen=True, eq=False)
class PosteriorDraws:
    """Retained draws.

    ``mu`` and ``sigma2`` are (D, N); ``nu[j]`` is (D, r, M_j).
    ``nu_hat[j]`` (r, M_j) and ``n_obs`` (N,) are kept for diagnostics.
    """

    mu: np.ndarray
    sigma2: np.ndarray
    nu: list
    nu_hat: list
    n_obs: np.ndarray
    g: float
    config: ModelConfig
    meta: dict = field(default_factory=dict)

    @property
    def n_draws(self):
        return self.mu.shape[0]

    @property
    def N(self):
        return self.mu.shape[1]

    @property
    def r(self):
        return self.nu[0].shape[1]

    @property
    def sizes(self):
        return tuple(v.shape[2] for v in self.nu)

    def stacked_nu(self):
        """(D, r, M) with processes concatenated along the last axis."""
        return np.concatenate(self.nu, axis=2)


def _as_replicated(Z):
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[None, :, None]
    elif Z.ndim == 2:
        Z = Z[None]
    if Z.ndim != 3:
        raise InvalidArgument("data must be (n, N) or (r, n, N)")
    if np.any(np.isinf(Z)):
        raise InvalidArgument("data contain infinite values")
    return Z


def _design_factor(Phi):
    try:
        L = np.linalg.cholesky(Phi.T @ Phi)
    except np.linalg.LinAlgError:
        raise RankDeficient("design matrix Phi^T Phi is singular") from None
    return L


def ols_coefficients(z, Phi, g=None, mu=None):
    """Least-squares fit of ``z - mean(z)`` on ``Phi`` with unit weights.

    Returns ``(nu_hat, ssr)`` with
    ``ssr = sum_i (z_i - mu - g/(g+1) Phi_i nu_hat)^2``; ``mu`` defaults to
    the data mean and ``g`` to the number of observations.
    """
    z = np.asarray(z, dtype=float)
    Phi = np.asarray(Phi, dtype=float)
    obs = ~np.isnan(z)
    z, Phi = z[obs], Phi[obs]
    if len(z) == 0:
        raise InvalidArgument("no observed values")
    g = len(z) if g is None else g
    zbar = z.mean()
    L = _design_factor(Phi)
    rhs = Phi.T @ (z - zbar)
    nu_hat = solve_triangular(L.T, solve_triangular(L, rhs, lower=True), lower=False)
    mu = zbar if mu is None else mu
    resid = z - mu - (g / (g + 1.0)) * (Phi @ nu_hat)
    return nu_hat, float(resid @ resid)


def sample_sigma2(ssr, n_obs, a_sigma, b_sigma, rng, size=None):
    """Draw from InverseGamma(n_obs/2 + a, ssr/2 + b)."""
    shape = 0.5 * n_obs + a_sigma
    scale = 0.5 * ssr + b_sigma
    if not scale > 0 or not shape > 0:
        raise DegeneratePosterior(
            "sigma2 conditional is improper (zero residual sum of squares under the "
            "Jeffreys prior); set a_sigma, b_sigma > 0")
    return scale / rng.gamma(shape, 1.0, size=size)


def sample_mu(resid_mean, sigma2, n_obs, rng, size=None):
    """Draw from Normal(resid_mean, sigma2 / n_obs)."""
    return resid_mean + np.sqrt(sigma2 / n_obs) * rng.standard_normal(size)


def sample_nu(nu_hat, shrink, sigma2, Linv_T, rng):
    """Draw ``nu ~ N(shrink nu_hat, shrink sigma2 (Phi^T Phi)^-1)`` for every
    row of ``nu_hat``; ``Linv_T`` is the transposed inverse Cholesky factor
    of Phi^T Phi (or a stack of them, one per row)."""
    z = rng.standard_normal(nu_hat.shape)
    scale = np.sqrt(shrink * sigma2)
    if Linv_T.ndim == 2:
        noise = z @ Linv_T.T
    else:
        noise = np.einsum("rab,rb->ra", Linv_T, z)
    return shrink * nu_hat + scale * noise


class _ProcessState:
    """Precomputed sufficient quantities for one process."""

    def __init__(self, Zj, Phi, g):
        r, n = Zj.shape
        self.mask = ~np.isnan(Zj)
        self.n_obs = int(self.mask.sum())
        if self.n_obs == 0:
            raise InvalidArgument("a process has no observed values")
        self.g = float(np.median(self.mask.sum(axis=1))) if g is None else float(g)
        self.shrink = self.g / (self.g + 1.0)
        M = Phi.shape[1]
        self.nu_hat = np.empty((r, M))
        full = self.mask.all(axis=1)
        # replications share mu, so centre on the pooled observed mean
        zbar = float(np.nanmean(Zj))
        Linv_T = np.empty((r, M, M))
        if full.any():
            L = _design_factor(Phi)
            LiT = solve_triangular(L, np.eye(M), lower=True).T
            idx = np.flatnonzero(full)
            zc = Zj[idx] - zbar
            rhs = zc @ Phi
            self.nu_hat[idx] = rhs @ LiT @ LiT.T
            Linv_T[idx] = LiT
        for k in np.flatnonzero(~full):
            o = self.mask[k]
            P = Phi[o]
            L = _design_factor(P)
            LiT = solve_triangular(L, np.eye(M), lower=True).T
            zk = Zj[k, o]
            self.nu_hat[k] = LiT @ LiT.T @ (P.T @ (zk - zbar))
            Linv_T[k] = LiT
        fitted = self.shrink * (self.nu_hat @ Phi.T)
        self.Linv_T = Linv_T[0] if full.all() else Linv_T
        resid = np.where(self.mask, Zj - fitted, 0.0)
        self.resid = resid
        self.resid_mean = float(resid.sum() / self.n_obs)
        self.resid_sq = float((resid ** 2).sum())

    def ssr(self, mu):
        dev = np.where(self.mask, self.resid - mu, 0.0)
        return float(np.einsum("ij,ij->", dev, dev))


def gibbs_fit(Z, ocs, cfg=None):
    """Run one chain of the block Gibbs sampler.

    Parameters
    ----------
    Z : array (n, N) or (r, n, N); NaN marks missing values.
    ocs : per-process OC bases (or raw (n, M_j) design matrices).
    cfg : ModelConfig.

    Each iteration updates ``sigma2 -> mu -> nu`` per process. The ``mu``
    conditional centres on the data minus the g-shrunk least-squares fit, so
    ``nu`` draws do not feed back into ``mu`` or ``sigma2``.
    """
    cfg = cfg or ModelConfig()
    Z = _as_replicated(Z)
    r, n, N = Z.shape
    if len(ocs) != N:
        raise InvalidArgument(f"need {N} bases, got {len(ocs)}")
    Phis = [np.asarray(getattr(o, "values", o), dtype=float) for o in ocs]
    if any(P.shape[0] != n for P in Phis):
        raise InvalidArgument("basis rows do not match the number of cells")
    states = [_ProcessState(Z[:, :, j], Phis[j], cfg.g) for j in range(N)]
    rng = np.random.default_rng([cfg.seed, cfg.chain])

    mu = np.empty(N)
    for j, st in enumerate(states):
        mu[j] = st.resid_mean
        if cfg.init == "random":
            spread = np.sqrt(st.resid_sq / st.n_obs) + 1.0
            mu[j] += spread * rng.standard_normal()
    D = cfg.n_draws
    out_mu = np.empty((D, N))
    out_s2 = np.empty((D, N))
    out_nu = [np.empty((D, r, P.shape[1])) for P in Phis]
    d = 0
    keep = set(range(cfg.n_burn, cfg.n_iter, cfg.thin))
    for it in range(cfg.n_iter):
        for j, st in enumerate(states):
            s2 = sample_sigma2(st.ssr(mu[j]), st.n_obs, cfg.a_sigma, cfg.b_sigma, rng)
            mu[j] = sample_mu(st.resid_mean, s2, st.n_obs, rng)
            nu = sample_nu(st.nu_hat, st.shrink, s2, st.Linv_T, rng)
            if it in keep:
                out_mu[d, j] = mu[j]
                out_s2[d, j] = s2
                out_nu[j][d] = nu
        if it in keep:
            d += 1
    return PosteriorDraws(out_mu, out_s2, out_nu, [st.nu_hat for st in states],
                          np.array([st.n_obs for st in states]), states[0].g, cfg,
                          {"g_per_process": [st.g for st in states],
                           "shrink": [st.shrink for st in states]})


def gibbs_fit_chains(Z, ocs, cfg=None, n_chains=1, threads=1):
    """Independent chains with seeds derived from (seed, chain index)."""
    from dataclasses import replace
    cfg = cfg or ModelConfig()
    cfgs = [replace(cfg, chain=c) for c in range(n_chains)]
    if threads <= 1 or n_chains == 1:
        return [gibbs_fit(Z, ocs, c) for c in cfgs]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(lambda c: gibbs_fit(Z, ocs, c), cfgs))


def posterior_coeff_cov(draws):
    """Sample covariance (divisor = count) of the stacked coefficient vector
    over retained draws, pooled over replications when r > 1."""
    X = draws.stacked_nu()
    D, r, M = X.shape
    if D * r < 2:
        raise InsufficientDraws("need at least 2 retained draws")
    X = X.reshape(D * r, M)
    Xc = X - X.mean(axis=0)
    S = Xc.T @ Xc / (D * r)
    return 0.5 * (S + S.T)


def per_draw_coeff_cov(draws):
    """One coefficient covariance per retained draw, taken across the
    replications of that draw (divisor r). Shape (D, M, M)."""
    X = draws.stacked_nu()
    D, r, M = X.shape
    if r < 2:
        raise InsufficientDraws("per-draw covariance needs at least 2 replications")
    Xc = X - X.mean(axis=1, keepdims=True)
    S = np.einsum("dra,drb->dab", Xc, Xc) / r
    return 0.5 * (S + S.transpose(0, 2, 1))


def batch_means_se(x, n_batches=20):
    """Monte-Carlo standard error of the mean of ``x`` along axis 0."""
    x = np.asarray(x, dtype=float)
    D = x.shape[0]
    b = min(n_batches, D)
    if b < 2:
        return np.full(x.shape[1:], np.nan)
    size = D // b
    means = x[: size * b].reshape((b, size) + x.shape[1:]).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(b)


def summarize(draws):
    """Posterior means and batch-means MC errors as a JSON-ready dict."""
    out = {"n_draws": int(draws.n_draws), "replications": int(draws.r),
           "g": draws.meta.get("g_per_process"),
           "observed_counts": draws.n_obs.tolist(), "processes": []}
    for j in range(draws.N):
        nu = draws.nu[j]
        out["processes"].append({
            "mu_mean": float(draws.mu[:, j].mean()),
            "mu_mcse": float(batch_means_se(draws.mu[:, j])),
            "sigma2_mean": float(draws.sigma2[:, j].mean()),
            "sigma2_mcse": float(batch_means_se(draws.sigma2[:, j])),
            "nu_mean": nu.mean(axis=0).tolist(),
            "nu_mcse": batch_means_se(nu).tolist(),
            "nu_shrunk_ols": (draws.meta["shrink"][j] * draws.nu_hat[j]).tolist(),
        })
    return out
