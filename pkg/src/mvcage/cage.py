"""Aggregation-error criterion for multivariate eigensystems.

For a unit A with cells B_c, the per-unit value is the eigenvalue-weighted
spread of the cell-level eigenfunctions about their areal average:

    DMVCAGE(A) = sum_c w_c sum_j sum_k lambda_k L([psi_k]_j(B_c) - [psi_k^A]_j(A))

with area weights ``w_c = |B_c| / |A|`` (``1 / n_A`` on a regular grid) and
``L(x) = x^2`` by default.
"""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, MvcageError, NoValidDraws, UnsupportedLoss
from .geometry import areal_average
from .kle import MultivariateEigenSystem, UnivariateEigenSystem, as_multivariate


@dataclass(frozen=True)
class Loss:
    """Per-coordinate loss applied to eigenfunction deviations.

    ``custom`` takes ``(diff, lam)`` with ``diff`` of shape (n, M, N) and
    ``lam`` of shape (M,) and returns a nonnegative array of the same shape
    as ``diff``; it must vanish at zero deviation.
    """

    kind: str = "squared"
    func: object = None

    def __post_init__(self):
        if self.kind not in ("squared", "absolute", "custom"):
            raise UnsupportedLoss(f"unknown loss {self.kind!r}")
        if self.kind == "custom" and not callable(self.func):
            raise UnsupportedLoss("custom loss needs a callable")

    def __call__(self, diff, lam):
        if self.kind == "squared":
            return lam[:, None] * diff ** 2
        if self.kind == "absolute":
            return lam[:, None] * np.abs(diff)
        out = np.asarray(self.func(diff, lam), dtype=float)
        if out.shape != diff.shape:
            raise UnsupportedLoss("custom loss must return an array shaped like its input")
        return out


def resolve_loss(loss):
    if isinstance(loss, Loss):
        return loss
    if loss is None:
        return Loss()
    if callable(loss):
        lf = Loss("custom", loss)
        probe = lf(np.zeros((1, 1, 1)), np.ones(1))
        if np.any(probe != 0):
            raise UnsupportedLoss("custom loss must vanish at zero deviation")
        return lf
    return Loss(str(loss))


@dataclass(frozen=True, eq=False)
class CageReport:
    """Per-unit criterion values and their totals.

    ``values`` (m,) sums ``per_process`` (m, N) over processes. ``total`` is
    the plain sum over units; ``weighted_total`` weights each unit by its
    share of the domain area.
    """

    values: np.ndarray
    per_process: np.ndarray
    unit_areas: np.ndarray
    provenance: str
    loss: str = "squared"
    n_draws: int = 1
    mc_se: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def m(self):
        return len(self.values)

    @property
    def total(self):
        return float(self.values.sum())

    @property
    def weighted_total(self):
        return float(self.values @ self.unit_areas / self.unit_areas.sum())


def _as_system(sys):
    if isinstance(sys, UnivariateEigenSystem):
        return as_multivariate(sys)
    if not isinstance(sys, MultivariateEigenSystem):
        raise InvalidArgument("expected an eigensystem")
    return sys


def _check(sys, part, grid):
    if part.n != sys.n or (grid is not None and grid.n != sys.n):
        raise InvalidArgument("partition, grid and eigensystem sizes differ")


def dmvcage(sys, part, grid=None, loss="squared", M=None):
    """Discrete criterion per unit for a fixed eigensystem.

    ``M`` truncates the eigen-sum; by default every retained pair is used.
    """
    sys = _as_system(sys)
    _check(sys, part, grid)
    if M is not None:
        sys = sys.truncate(M)
    lf = resolve_loss(loss)
    F = sys.point_table()
    FA = areal_average(F, part)
    diff = F - FA[part.labels]
    contrib = lf(diff, sys.eigenvalues).sum(axis=1)
    w = part.areas / part.unit_areas[part.labels]
    per = np.zeros((part.m, sys.N))
    np.add.at(per, part.labels, w[:, None] * contrib)
    return CageReport(per.sum(axis=1), per, part.unit_areas.copy(), sys.provenance, lf.kind)


def univariate_cage(sys_j, part, grid=None, loss="squared"):
    """Criterion for a single process; identical to :func:`dmvcage` at N = 1."""
    if isinstance(sys_j, MultivariateEigenSystem) and sys_j.N != 1:
        raise InvalidArgument("univariate criterion needs a single-process system")
    return dmvcage(sys_j, part, grid, loss)


def anova_decomposition(sys, part, grid=None, loss="squared"):
    """Per-unit ``(point_term, areal_term)``.

    ``point_term`` is the area-weighted average over the unit of the trace of
    the point covariance; ``areal_term`` is the trace of the covariance of
    the unit average. Their difference is the squared-loss criterion.
    """
    if resolve_loss(loss).kind != "squared":
        raise UnsupportedLoss("the variance decomposition holds for squared loss only")
    sys = _as_system(sys)
    _check(sys, part, grid)
    F = sys.point_table()
    lam = sys.eigenvalues
    pt_cell = np.einsum("nkj,k->n", F ** 2, lam)
    w = part.areas / part.unit_areas[part.labels]
    point = np.bincount(part.labels, weights=w * pt_cell, minlength=part.m)
    FA = areal_average(F, part)
    areal = np.einsum("mkj,k->m", FA ** 2, lam)
    return point, areal


def posterior_mvcage(draws, builder=None, part=None, grid=None, loss="squared",
                     threads=1):
    """Criterion averaged over eigensystems built from posterior draws.

    ``builder`` maps one draw to an eigensystem; leave it ``None`` when the
    draws already are eigensystems. Draws whose construction fails are
    skipped and counted in ``meta['skipped']``.
    """
    draws = list(draws)
    if not draws:
        raise InvalidArgument("need at least one draw")
    if part is None:
        raise InvalidArgument("a partition is required")

    def one(d):
        try:
            sys = builder(d) if builder is not None else d
            return dmvcage(sys, part, grid, loss)
        except MvcageError as exc:
            if isinstance(exc, InvalidArgument):
                raise
            return exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(one, draws))
    else:
        results = [one(d) for d in draws]
    good = [r for r in results if isinstance(r, CageReport)]
    skipped = len(results) - len(good)
    if not good:
        raise NoValidDraws(f"all {len(results)} draws failed eigensystem construction")
    if skipped:
        warnings.warn(f"{skipped} posterior draw(s) skipped", stacklevel=2)
    vals = np.stack([r.values for r in good])
    per = np.stack([r.per_process for r in good])
    D = len(good)
    se = vals.std(axis=0, ddof=1) / np.sqrt(D) if D > 1 else np.zeros(vals.shape[1])
    return CageReport(vals.mean(axis=0), per.mean(axis=0), part.unit_areas.copy(),
                      f"posterior expectation over {D} draws", good[0].loss, D, se,
                      {"skipped": skipped, "draw_totals": vals.sum(axis=1).tolist()})
