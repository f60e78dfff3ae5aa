import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mvcage.basis import fourier_basis, oc_orthogonalize
from mvcage.bayes import ModelConfig, gibbs_fit, per_draw_coeff_cov
from mvcage.cage import (Loss, anova_decomposition, dmvcage, posterior_mvcage, resolve_loss,
                         univariate_cage)
from mvcage.covariance import BivariateMaternParams, build_joint_cov, simulate_gp
from mvcage.errors import IndefiniteScoreCovariance, InvalidArgument, NoValidDraws, UnsupportedLoss
from mvcage.geometry import (build_grid, grid_from_arrays, make_partition,
                             singleton_partition, whole_partition)
from mvcage.kle import (MultivariateEigenSystem, dense_eigensystem, posterior_eof_eigensystem,
                        univariate_kle_galerkin)

from .oracles import dmvcage_loop, random_system


def test_four_cell_hand_example():
    g = build_grid((0, 1), 4)
    psi = np.array([1.0, 1.0, -1.0, -1.0])  # quadrature norm: sum 0.25 psi^2 = 1
    sys = MultivariateEigenSystem(np.array([2.0]), psi[None, :, None], "hand")
    assert np.allclose(dmvcage(sys, make_partition([0, 0, 1, 1], g), g).values, 0.0)
    vals = dmvcage(sys, make_partition([0, 1, 0, 1], g), g).values
    # unit {1, 3}: mean 0, each cell deviates by 1, lambda = 2
    assert np.allclose(vals, [2.0, 2.0])
    assert np.allclose(vals, dmvcage_loop([2.0], psi[None, :, None], [0, 1, 0, 1]))


@given(st.integers(0, 10 ** 6), st.integers(4, 40), st.integers(1, 6))
def test_matches_loop_oracle(seed, n, m):
    rng = np.random.default_rng(seed)
    sys = random_system(rng, n, 2, min(5, 2 * n))
    labels = rng.integers(0, min(m, n), n)
    g = build_grid((0, 1), n)
    part = make_partition(labels, g)
    ref = dmvcage_loop(sys.eigenvalues, sys.eigenfunctions, part.labels.tolist())
    assert np.allclose(dmvcage(sys, part, g).values, ref, atol=1e-12)


def test_singleton_zero_and_whole_positive(rng):
    sys = random_system(rng, 30, 2, 6)
    g = build_grid((0, 1), 30)
    assert np.all(dmvcage(sys, singleton_partition(g), g).values == 0)
    assert dmvcage(sys, whole_partition(g), g).total > 0


def test_piecewise_constant_null(rng):
    g = build_grid((0, 1), 40)
    labels = np.repeat(np.arange(4), 10)
    psi = rng.standard_normal((2, 4, 3))[:, labels, :]
    sys = MultivariateEigenSystem(np.array([3.0, 2.0, 1.0]), psi, "blocky")
    assert np.abs(dmvcage(sys, make_partition(labels, g), g).values).max() <= 1e-12


def test_scale_equivariance(rng):
    g = build_grid((0, 1), 50)
    C = build_joint_cov(g, BivariateMaternParams.simulation_defaults())
    part = make_partition(rng.integers(0, 5, 50), g)
    base = dmvcage(dense_eigensystem(C, g), part, g).values
    scaled = dmvcage(dense_eigensystem(C.rescale([2.0, 2.0]), g), part, g).values
    assert np.abs(scaled - 4.0 * base).max() < 1e-10


@given(st.integers(0, 10 ** 6))
def test_anova_identity(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(8, 65))
    sys = random_system(rng, n, 2, int(rng.integers(1, 9)))
    g = build_grid((0, 1), n)
    part = make_partition(rng.integers(0, 5, n), g)
    point, areal = anova_decomposition(sys, part, g)
    rep = dmvcage(sys, part, g)
    assert np.abs(point - areal - rep.values).max() < 1e-10
    assert abs((point - areal).sum() - rep.total) < 1e-10


def test_anova_unequal_areas(rng):
    g = grid_from_arrays(rng.uniform(0, 1, (12, 1)), rng.uniform(0.5, 2, 12),
                         [[i, i + 1] for i in range(11)])
    F = rng.standard_normal((2, 12, 3))
    sys = MultivariateEigenSystem(np.array([1.0, 0.5, 0.2]), F, "raw")
    part = make_partition(rng.integers(0, 3, 12), g)
    point, areal = anova_decomposition(sys, part, g)
    assert np.abs(point - areal - dmvcage(sys, part, g).values).max() < 1e-10


def test_anova_edge_cases(rng):
    n = 24
    sys = random_system(rng, n, 2, 4)
    g = build_grid((0, 1), n)
    point, areal = anova_decomposition(sys, singleton_partition(g), g)
    assert np.allclose(point, areal, atol=1e-13)
    _, areal = anova_decomposition(sys, whole_partition(g), g)
    C = sum(lam * np.outer(f, f) for lam, f in
            zip(sys.eigenvalues, sys.eigenfunctions.reshape(2 * n, -1).T))
    trace = sum(C[j * n:(j + 1) * n, j * n:(j + 1) * n].mean() for j in range(2))
    assert areal[0] == pytest.approx(trace, rel=1e-12)
    with pytest.raises(UnsupportedLoss):
        anova_decomposition(sys, whole_partition(g), g, loss="absolute")


def test_losses(rng):
    n = 16
    sys = random_system(rng, n, 2, 3)
    g = build_grid((0, 1), n)
    part = make_partition(np.repeat([0, 1], 8), g)
    sq = dmvcage(sys, part, g).values
    custom = dmvcage(sys, part, g, loss=lambda d, lam: lam[:, None] * d ** 2).values
    assert np.allclose(sq, custom)
    ab = dmvcage(sys, part, g, loss="absolute")
    assert ab.loss == "absolute" and np.all(ab.values > 0)
    with pytest.raises(UnsupportedLoss):
        resolve_loss("huber")
    with pytest.raises(UnsupportedLoss):
        resolve_loss(lambda d, lam: np.ones_like(d))
    assert resolve_loss(None) == Loss()


def test_truncation_argument(rng):
    sys = random_system(rng, 20, 2, 5)
    g = build_grid((0, 1), 20)
    part = make_partition(np.arange(20) // 5, g)
    assert np.allclose(dmvcage(sys, part, g, M=2).values, dmvcage(sys.truncate(2), part, g).values)


def test_univariate_equivalence(grid100, oc100, rng):
    C = build_joint_cov(grid100, BivariateMaternParams.simulation_defaults(0.0))
    part = make_partition(np.arange(100) // 10, grid100)
    uni = [univariate_kle_galerkin(C.block(j, j), oc100, grid100, process=j) for j in range(2)]
    total = sum(univariate_cage(u, part, grid100).values for u in uni)
    # block-diagonal truth: the joint system is the union of the univariate ones
    joint = posterior_eof_eigensystem(
        np.diag(np.concatenate([u.eigenvalues for u in uni])),
        [type("B", (), {"values": u.eigenfunctions, "size": u.M})() for u in uni])
    assert np.abs(dmvcage(joint, part, grid100).values - total).max() < 1e-8
    zero = MultivariateEigenSystem(np.zeros(2), rng.standard_normal((1, 100, 2)), "z")
    assert not univariate_cage(zero, part, grid100).values.any()


def test_size_mismatch(rng):
    sys = random_system(rng, 10, 2, 3)
    with pytest.raises(InvalidArgument):
        dmvcage(sys, whole_partition(build_grid((0, 1), 11)))


def test_posterior_single_and_identical(rng):
    sys = random_system(rng, 20, 2, 4)
    g = build_grid((0, 1), 20)
    part = make_partition(np.arange(20) // 4, g)
    plug = dmvcage(sys, part, g).values
    assert np.array_equal(posterior_mvcage([sys], None, part, g).values, plug)
    many = posterior_mvcage([sys] * 5, None, part, g, threads=2)
    assert np.allclose(many.values, plug, rtol=1e-15) and many.n_draws == 5


def test_posterior_skips_failures(rng):
    sys = random_system(rng, 20, 2, 4)
    g = build_grid((0, 1), 20)
    part = whole_partition(g)

    def builder(d):
        if d < 0:
            raise IndefiniteScoreCovariance("negative draw")
        return sys

    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        rep = posterior_mvcage([1, -1, 2], builder, part, g)
    assert rep.meta["skipped"] == 1 and rep.n_draws == 2 and w
    with pytest.raises(NoValidDraws):
        posterior_mvcage([-1, -2], builder, part, g)


def test_posterior_mc_error_from_gibbs():
    g = build_grid((0, 1), 60)
    oc = oc_orthogonalize(fourier_basis(g, 4), g)
    C = build_joint_cov(g, BivariateMaternParams.simulation_defaults())
    Z = simulate_gp(C, 40, 1)
    d = gibbs_fit(Z, [oc, oc], ModelConfig(n_iter=600, n_burn=100, thin=10))
    covs = per_draw_coeff_cov(d)
    assert len(covs) == 50
    part = make_partition(np.arange(60) // 6, g)
    rep = posterior_mvcage(covs, lambda S: posterior_eof_eigensystem(S, [oc, oc]), part, g)
    big = rep.values > np.median(rep.values)
    assert np.all(rep.mc_se[big] < 0.1 * rep.values[big])
