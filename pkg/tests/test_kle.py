import numpy as np
import pytest

from mvcage.basis import BasisSet, fourier_basis, oc_orthogonalize
from mvcage.covariance import (BivariateMaternParams, JointCovariance, build_joint_cov,
                               matern_kernel, pairwise_distances, simulate_gp)
from mvcage.errors import (InconsistentEigensystem, IndefiniteScoreCovariance,
                           InsufficientReplications, InvalidArgument, InvalidCovariance)
from mvcage.geometry import build_grid, make_partition, singleton_partition
from mvcage.kle import (areal_cov_direct, areal_covariance, areal_eigensystem, dense_eigensystem,
                        empirical_coefficient_eigensystem, kle_scores, mercer_reconstruct,
                        multivariate_eigensystem, orthonormality_error,
                        posterior_eof_eigensystem, score_cov, univariate_kle_galerkin)

from .oracles import double_average, in_span_covariance, power_iteration

# Top eigenvalue of exp(-|x - y|) on [0, 1]: lambda = 2 / (1 + w^2) with w the
# smallest positive root of tan(w) = 2w / (w^2 - 1); computed once by brentq.
EXP_LAMBDA1 = 0.7388108094164549
# Dense n = 500 midpoint eigensolve of the same kernel (frozen).
EXP_LAMBDA1_DENSE500 = 0.7388118333313216


def projectors_equal(A, B, tol):
    return np.abs(A @ A.T - B @ B.T).max() < tol


@pytest.fixture(scope="module")
def exp_setup():
    g = build_grid((0, 1), 500)
    C = matern_kernel(pairwise_distances(g.centers), 0.5, 1.0)
    oc = oc_orthogonalize(fourier_basis(g, 25), g)
    return g, C, oc


def test_exponential_top_eigenvalue(exp_setup):
    g, C, oc = exp_setup
    sys = univariate_kle_galerkin(C, oc, g)
    assert abs(sys.eigenvalues[0] - EXP_LAMBDA1_DENSE500) / EXP_LAMBDA1_DENSE500 < 0.02
    assert abs(sys.eigenvalues[0] - EXP_LAMBDA1) < 1e-5
    dense = dense_eigensystem(JointCovariance(C[None, None]), g, M=3)
    assert dense.eigenvalues[0] == pytest.approx(EXP_LAMBDA1_DENSE500, rel=1e-12)


def test_trace_identity(exp_setup):
    g, C, oc = exp_setup
    sys = univariate_kle_galerkin(C, oc, g, M=oc.size)
    B = oc.values * g.areas[:, None]
    assert abs(np.trace(B.T @ C @ B) - sys.eigenvalues.sum()) < 1e-8


def test_rank_one_in_span(grid100, oc100):
    psi = oc100.values[:, 3]
    sys = univariate_kle_galerkin(2.5 * np.outer(psi, psi), oc100, grid100, M=1)
    assert sys.eigenvalues[0] == pytest.approx(2.5, rel=1e-10)
    assert np.allclose(np.abs(sys.eigenfunctions[:, 0]), np.abs(psi), atol=1e-10)


def test_univariate_orthonormal_and_sign(exp_setup):
    g, C, oc = exp_setup
    sys = univariate_kle_galerkin(C, oc, g, M=10)
    F = sys.eigenfunctions
    assert np.abs(F.T @ (F * g.areas[:, None]) - np.eye(10)).max() < 1e-8
    for k in range(10):
        top = np.abs(F[:, k]).max()
        first = np.flatnonzero(np.abs(F[:, k]) >= top * (1 - 1e-8))[0]
        assert F[first, k] > 0


def test_asymmetric_rejected(grid100, oc100, rng):
    A = rng.standard_normal((100, 100))
    with pytest.raises(InvalidCovariance):
        univariate_kle_galerkin(A, oc100, grid100)


def _systems(C, oc, g):
    return [univariate_kle_galerkin(C.block(j, j), oc, g, process=j) for j in range(C.N)]


def test_score_cov_independent_and_diagonal(grid100, oc100):
    C = build_joint_cov(grid100, BivariateMaternParams.simulation_defaults(0.0))
    sys = _systems(C, oc100, grid100)
    K = score_cov(C, sys, grid100)
    assert not K.block(0, 1).any()
    for j in range(2):
        assert np.abs(K.block(j, j) - np.diag(sys[j].eigenvalues)).max() < 1e-8


def test_score_cov_monte_carlo(rng):
    g = build_grid((0, 1), 50)
    oc = oc_orthogonalize(fourier_basis(g, 4), g)
    C = build_joint_cov(g, BivariateMaternParams.simulation_defaults(0.6))
    sys = _systems(C, oc, g)
    K = score_cov(C, sys, g)
    # K^{01}_{00} as a double integral estimated from random cell pairs
    npairs = 10 ** 6
    c = rng.integers(0, 50, npairs)
    d = rng.integers(0, 50, npairs)
    f = sys[0].eigenfunctions[c, 0] * C.block(0, 1)[c, d] * sys[1].eigenfunctions[d, 0]
    est, se = f.mean(), f.std() / np.sqrt(npairs)
    assert abs(est - K.block(0, 1)[0, 0]) < 3 * se


def test_score_cov_inconsistent(grid100, oc100):
    C = build_joint_cov(grid100, BivariateMaternParams.simulation_defaults())
    other = build_joint_cov(grid100, BivariateMaternParams.simulation_defaults(sigma2=(3.0, 1.0)))
    with pytest.raises(InconsistentEigensystem):
        score_cov(other, _systems(C, oc100, grid100), grid100)


def test_multivariate_trace_and_power(grid100, oc100):
    C = build_joint_cov(grid100, BivariateMaternParams.simulation_defaults(0.5))
    sys = _systems(C, oc100, grid100)
    K = score_cov(C, sys, grid100)
    mv = multivariate_eigensystem(K, sys)
    assert abs(mv.eigenvalues.sum() - np.trace(K.matrix)) < 1e-8
    assert abs(mv.eigenvalues.sum() - sum(s.eigenvalues.sum() for s in sys)) < 1e-8
    assert mv.eigenvalues[0] == pytest.approx(power_iteration(K.matrix), rel=1e-9)
    assert orthonormality_error(mv, grid100) < 1e-8


def test_single_process_reduces(grid100, oc100):
    C = build_joint_cov(grid100, BivariateMaternParams.simulation_defaults())
    C1 = JointCovariance(C.blocks[:1, :1])
    sys = _systems(C1, oc100, grid100)
    mv = multivariate_eigensystem(score_cov(C1, sys, grid100), sys)
    assert np.allclose(mv.eigenvalues, sys[0].eigenvalues, rtol=1e-10, atol=1e-14)
    big = sys[0].eigenvalues > 1e-6 * sys[0].eigenvalues[0]
    assert np.allclose(mv.eigenfunctions[0][:, big], sys[0].eigenfunctions[:, big], atol=1e-6)


def test_indefinite_score_cov(grid100, oc100):
    with pytest.raises(IndefiniteScoreCovariance):
        posterior_eof_eigensystem(-np.eye(2 * oc100.size), [oc100, oc100])


def test_posterior_eof_identity_and_diagonal(grid100, oc100):
    M = oc100.size
    mv = posterior_eof_eigensystem(np.eye(2 * M), [oc100, oc100])
    assert np.allclose(mv.eigenvalues, 1.0)
    stacked = mv.eigenfunctions.reshape(2 * grid100.n, -1) * np.sqrt(grid100.areas[0])
    assert projectors_equal(stacked, np.kron(np.eye(2), oc100.values) * np.sqrt(grid100.areas[0]), 1e-10)
    d = np.arange(2 * M, 0, -1.0)[::-1]
    mv = posterior_eof_eigensystem(np.diag(d), [oc100, oc100])
    assert np.allclose(mv.eigenvalues, np.sort(d)[::-1])
    top = np.argmax(d)
    assert np.allclose(np.abs(mv.eigenfunctions[top // M, :, 0]), np.abs(oc100.values[:, top % M]))


def test_posterior_eof_dimension_mismatch(oc100):
    with pytest.raises(InvalidArgument):
        posterior_eof_eigensystem(np.eye(3), [oc100, oc100])


def test_mercer_in_span(grid100, oc100, rng):
    C, _ = in_span_covariance(oc100.values, rng)
    mv = dense_eigensystem(C, grid100)
    R = mercer_reconstruct(mv)
    assert np.linalg.norm(R.full() - C.full()) / np.linalg.norm(C.full()) < 1e-8


def test_mercer_trace_and_monotone(grid100, oc100, rng):
    C, _ = in_span_covariance(oc100.values, rng)
    mv = dense_eigensystem(C, grid100)
    a = np.tile(grid100.areas, 2)
    total = np.sum(a * np.diag(C.full()))
    errs = []
    for m in range(1, mv.M + 1):
        R = mercer_reconstruct(mv, m)
        deficit = total - np.sum(a * np.diag(R.full()))
        assert abs(deficit - mv.eigenvalues[m:].sum()) < 1e-10
        errs.append(np.linalg.norm(R.full() - C.full()))
    assert np.all(np.diff(errs) <= 1e-10)


def test_areal_singleton_and_constant(grid100, oc100, rng):
    C, _ = in_span_covariance(oc100.values, rng)
    mv = dense_eigensystem(C, grid100)
    assert np.allclose(areal_eigensystem(mv, singleton_partition(grid100)), mv.point_table(),
                       rtol=1e-14, atol=1e-14)
    part = make_partition(rng.integers(0, 4, 100), grid100)
    const = mv.point_table().copy()
    const[:] = 0.7
    from mvcage.geometry import areal_average
    assert np.allclose(areal_average(const, part), 0.7)


def test_multiscale_mercer_two_units(grid100, oc100, rng):
    C, _ = in_span_covariance(oc100.values, rng)
    mv = dense_eigensystem(C, grid100)
    labels = (np.arange(100) >= 37).astype(int)
    part = make_partition(labels, grid100)
    A = areal_covariance(mv, part)
    units = [np.flatnonzero(labels == u) for u in range(2)]
    for i in range(2):
        for j in range(2):
            for a in range(2):
                for b in range(2):
                    ref = double_average(C.block(i, j), units[a], units[b], grid100.areas)
                    assert abs(A.block(i, j)[a, b] - ref) < 1e-8
    assert np.abs(areal_cov_direct(C, part).full() - A.full()).max() < 1e-8


def test_score_decorrelation():
    g = build_grid((0, 1), 60)
    C = build_joint_cov(g, BivariateMaternParams.simulation_defaults(0.6))
    mv = dense_eigensystem(C, g, M=4)
    r = 20000
    a = kle_scores(simulate_gp(C, r, 11), mv, g)
    S = a.T @ a / r
    se = np.sqrt(np.outer(mv.eigenvalues, mv.eigenvalues) * (1 + np.eye(4)) / r)
    assert np.all(np.abs(S - np.diag(mv.eigenvalues)) < 4 * se)


def test_score_route_matches_eof_route(grid100, oc100, rng):
    C, _ = in_span_covariance(oc100.values, rng)
    sys = _systems(C, oc100, grid100)
    mv = multivariate_eigensystem(score_cov(C, sys, grid100), sys)
    ocs = [BasisSet("u", s.eigenfunctions) for s in sys]
    ocs = [oc_orthogonalize(b, grid100) for b in ocs]
    coef = []
    for i in range(2):
        row = []
        for j in range(2):
            Pi = ocs[i].values * grid100.areas[:, None]
            Pj = ocs[j].values * grid100.areas[:, None]
            row.append(Pi.T @ C.block(i, j) @ Pj)
        coef.append(row)
    eof = posterior_eof_eigensystem(np.block(coef), ocs)
    assert np.linalg.norm(mercer_reconstruct(mv).full() - mercer_reconstruct(eof).full()) < 1e-7


def test_empirical_route(grid100, oc100):
    C = build_joint_cov(grid100, BivariateMaternParams.simulation_defaults())
    data = simulate_gp(C, 400, 3)
    mv = empirical_coefficient_eigensystem(data, [oc100, oc100], grid100)
    assert mv.provenance == "empirical" and orthonormality_error(mv, grid100) < 1e-8
    with pytest.raises(InsufficientReplications):
        empirical_coefficient_eigensystem(data[:1], [oc100, oc100], grid100)


def test_truncate_bounds(grid100, oc100, rng):
    C, _ = in_span_covariance(oc100.values, rng)
    mv = dense_eigensystem(C, grid100)
    assert mv.truncate(3).M == 3
    with pytest.raises(InvalidArgument):
        mv.truncate(0)
