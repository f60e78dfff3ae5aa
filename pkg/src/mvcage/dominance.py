"""Monte-Carlo comparison of the joint criterion against summed per-process
criteria.

The posterior model keeps the correlation structure of the truth fixed and
places a scale-invariant prior on the two process standard deviations:
``C = diag(s) R diag(s)`` with a flat prior on ``log s_j``. Under this model
the joint posterior of ``(s_1, s_2)`` uses the cross-correlation in the data,
whereas the per-process posteriors condition on one process only. The joint
posterior is evaluated on a grid in ``(log s_1, log s_2)``; the per-process
posteriors are exact inverse-gamma laws.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize

from .cage import dmvcage, posterior_mvcage
from .covariance import BivariateMaternParams, JointCovariance, build_joint_cov, simulate_gp
from .errors import InvalidArgument
from .geometry import build_grid, make_partition
from .kle import dense_eigensystem


@dataclass(frozen=True)
class DominanceConfig:
    n: int = 100
    n_units: int = 10
    replicates: int = 200
    replications_per_dataset: int = 1
    n_draws: int = 30
    grid_points: int = 121
    seed: int = 0


@dataclass(frozen=True, eq=False)
class DominanceResult:
    mse_mvcage: float
    mse_sum_cage: float
    diff_mean: float
    diff_se: float
    truth: np.ndarray
    errors_mvcage: np.ndarray
    errors_sum_cage: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def dominates(self):
        return self.mse_mvcage <= self.mse_sum_cage


def _quad_stats(Z, Rinv, n):
    """a_ij = sum over replications of z_i^T (R^-1)_ij z_j."""
    a = np.empty((2, 2))
    for i in range(2):
        for j in range(2):
            B = Rinv[i * n:(i + 1) * n, j * n:(j + 1) * n]
            a[i, j] = np.einsum("ra,ab,rb->", Z[:, :, i], B, Z[:, :, j])
    return 0.5 * (a + a.T)


def _neg_log_post(u, a, nobs):
    e1, e2 = np.exp(-u[0]), np.exp(-u[1])
    f = nobs * (u[0] + u[1]) + 0.5 * (a[0, 0] * e1 * e1 + 2 * a[0, 1] * e1 * e2
                                      + a[1, 1] * e2 * e2)
    g = np.array([nobs - a[0, 0] * e1 * e1 - a[0, 1] * e1 * e2,
                  nobs - a[1, 1] * e2 * e2 - a[0, 1] * e1 * e2])
    return f, g


def _hessian(u, a):
    e1, e2 = np.exp(-u[0]), np.exp(-u[1])
    c = a[0, 1] * e1 * e2
    return np.array([[2 * a[0, 0] * e1 * e1 + c, c], [c, 2 * a[1, 1] * e2 * e2 + c]])


def joint_scale_draws(a, nobs, n_draws, rng, grid_points=121, start=None):
    """Draws of (s_1, s_2) from the grid posterior in log scale.

    ``nobs`` is the number of observations per process (cells x
    replications). The grid is centred on the posterior mode and spans
    eight posterior standard deviations either side.
    """
    u0 = 0.5 * np.log(np.diag(a) / nobs) if start is None else np.asarray(start, float)
    res = minimize(_neg_log_post, u0, args=(a, nobs), jac=True, method="BFGS",
                   options={"gtol": 1e-10})
    mode = res.x
    sd = np.sqrt(np.diag(np.linalg.inv(_hessian(mode, a))))
    axes = [np.linspace(c - 8 * h, c + 8 * h, grid_points) for c, h in zip(mode, sd)]
    U1, U2 = np.meshgrid(*axes, indexing="ij")
    logp = -_neg_log_post(np.stack([U1, U2]), a, nobs)[0]
    p = np.exp(logp - logp.max()).ravel()
    p /= p.sum()
    idx = rng.choice(p.size, size=n_draws, p=p)
    step = np.array([axes[0][1] - axes[0][0], axes[1][1] - axes[1][0]])
    jit = rng.uniform(-0.5, 0.5, size=(n_draws, 2)) * step
    u = np.stack([U1.ravel()[idx], U2.ravel()[idx]], axis=1) + jit
    return np.exp(u)


def marginal_scale_draws(b, nobs, n_draws, rng):
    """Draws of s_j from s_j^2 ~ InverseGamma(nobs/2, b/2)."""
    return np.sqrt(0.5 * b / rng.gamma(0.5 * nobs, 1.0, size=n_draws))


def mse_dominance_experiment(truth, cfg=None, part=None, grid=None):
    """Squared error of the joint posterior criterion and of the sum of
    per-process posterior criteria against the true criterion.

    Returns a :class:`DominanceResult`; ``diff_mean`` is the mean paired
    difference (joint minus summed) of the per-dataset squared errors.
    """
    cfg = cfg or DominanceConfig()
    if cfg.replicates < 30:
        raise InvalidArgument("need at least 30 replicate datasets")
    if not isinstance(truth, BivariateMaternParams):
        raise InvalidArgument("truth must be bivariate Matern parameters")
    grid = grid or build_grid((0.0, 1.0), cfg.n)
    n = grid.n
    if part is None:
        labels = np.minimum(np.arange(n) * cfg.n_units // n, cfg.n_units - 1)
        part = make_partition(labels, grid)

    C = build_joint_cov(grid, truth)
    s_true = np.sqrt([truth.p1.sigma2, truth.p2.sigma2])
    Rcorr = C.rescale(1.0 / s_true)
    true_report = dmvcage(dense_eigensystem(C, grid, M=2 * n), part, grid)
    t = true_report.values

    Rinv = cho_solve(cho_factor(Rcorr.full(), lower=True), np.eye(2 * n))
    Rjj = [cho_factor(Rcorr.block(j, j), lower=True) for j in range(2)]
    rep = cfg.replications_per_dataset
    data = simulate_gp(C, cfg.replicates * rep, cfg.seed)
    data = data.reshape(cfg.replicates, rep, n, 2)
    rng = np.random.default_rng([cfg.seed, 1])
    nobs = n * rep

    def joint_builder(s):
        return dense_eigensystem(Rcorr.rescale(s), grid)

    uni = [JointCovariance(Rcorr.blocks[j:j + 1, j:j + 1]) for j in range(2)]

    err_mv = np.empty(cfg.replicates)
    err_sum = np.empty(cfg.replicates)
    for i in range(cfg.replicates):
        Z = data[i]
        a = _quad_stats(Z, Rinv, n)
        b = [float(np.sum(Z[:, :, j] * cho_solve(Rjj[j], Z[:, :, j].T).T)) for j in range(2)]
        start = 0.5 * np.log(np.array(b) / nobs)
        sj = joint_scale_draws(a, nobs, cfg.n_draws, rng, cfg.grid_points, start)
        est_mv = posterior_mvcage(sj, joint_builder, part, grid).values
        est_sum = np.zeros(part.m)
        for j in range(2):
            s = marginal_scale_draws(b[j], nobs, cfg.n_draws, rng)
            est_sum += posterior_mvcage(
                s, lambda v, j=j: dense_eigensystem(uni[j].rescale([v]), grid),
                part, grid).values
        err_mv[i] = np.sum((est_mv - t) ** 2)
        err_sum[i] = np.sum((est_sum - t) ** 2)

    d = err_mv - err_sum
    return DominanceResult(float(err_mv.mean()), float(err_sum.mean()), float(d.mean()),
                           float(d.std(ddof=1) / np.sqrt(len(d))), t, err_mv, err_sum,
                           {"rho": truth.rho, "n": n, "units": part.m,
                            "replicates": cfg.replicates, "draws": cfg.n_draws})
