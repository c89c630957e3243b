import itertools
import warnings

import numpy as np
import pytest

from conftest import bump
from discretization import GreenSolver, SourceSpec, solve_background
from errors import ConfigurationError, ConvergenceRadiusWarning, DimensionError, DomainError
from forward_series import ForwardTermCache, Susceptibility, compute_K, fixed_point_solve
from inverse_series import (
    ScatteringData,
    assemble_K1,
    build_pinv,
    composition_tuples,
    compositions,
    inverse_terms,
    reconstruct,
)


@pytest.fixture(scope="module")
def backgrounds(grid_1d):
    out = []
    for k in (0.9, 1.0, 1.1):
        solver = GreenSolver(grid_1d, k)
        for loc in ((0.0,), (1.0,)):
            for scale in (0.5, 1.0):
                out.append(solve_background(grid_1d, SourceSpec(loc, scale, k), solver))
    return out


def synthesize(grid, backgrounds, zeta):
    rows = []
    for bg in backgrounds:
        u, _ = fixed_point_solve(zeta, bg, tol=1e-14)
        rows.append((u - bg.values)[grid.boundary])
    return ScatteringData(
        phi=np.array(rows),
        sources=[bg.source for bg in backgrounds],
        receivers=grid.coordinates[grid.boundary],
    )


# ------------------------------------------------------------------
# combinatorics
# ------------------------------------------------------------------

def test_compositions_small():
    assert compositions(4, 2) == [(1, 3), (2, 2), (3, 1)]
    assert compositions(3, 5) == []
    assert compositions(5, 1) == [(5,)]
    assert composition_tuples(3) == [(1, 2), (2, 1), (1, 1, 1)]


def test_compositions_match_brute_force():
    for m in range(1, 7):
        for n in range(1, m + 1):
            brute = [c for c in itertools.product(range(1, m + 1), repeat=n) if sum(c) == m]
            assert compositions(m, n) == brute


# ------------------------------------------------------------------
# pseudoinverse
# ------------------------------------------------------------------

def test_pinv_truncates_small_singular_values():
    pinv = build_pinv(np.diag([1.0, 0.1, 1e-8]), tau=1e-3)
    assert pinv.rank == 2
    assert pinv.norm == pytest.approx(10.0)
    assert pinv.sigma_max == 1.0
    np.testing.assert_allclose(pinv.apply([1.0, 1.0, 1.0]), [1.0, 10.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(pinv.matrix, np.diag([1.0, 10.0, 0.0]), atol=1e-12)


def test_pinv_rejects_bad_input():
    with pytest.raises(DomainError):
        build_pinv(np.eye(3), tau=0.0)
    with pytest.raises(DomainError):
        build_pinv(np.eye(3), tau=1.0)
    with pytest.raises(DomainError):
        build_pinv(np.zeros((3, 2)))
    with pytest.raises(DomainError):
        build_pinv(np.zeros((0, 2)))
    with pytest.raises(DimensionError):
        build_pinv(np.eye(3)).apply(np.ones(4))


def test_pinv_rank_never_grows_with_tau(grid_1d, backgrounds):
    kmap = assemble_K1(grid_1d, backgrounds)
    ranks = [build_pinv(kmap, tau).rank for tau in (1e-12, 1e-8, 1e-4, 1e-2, 0.1, 0.5)]
    assert ranks == sorted(ranks, reverse=True)
    assert ranks[0] > ranks[-1]
    assert build_pinv(np.diag([3.0, 2.0, 1.0]), 1.0 - 1e-9).rank == 1


def test_pinv_is_identity_on_retained_subspace(grid_1d, backgrounds):
    kmap = assemble_K1(grid_1d, backgrounds)
    pinv = build_pinv(kmap, tau=1e-3)
    V = pinv.Vt.T
    np.testing.assert_allclose(pinv.matrix @ (kmap.matrix @ V), V, rtol=0, atol=1e-9)


# ------------------------------------------------------------------
# K1
# ------------------------------------------------------------------

def test_K1_columns_match_forward_operator(grid_1d, backgrounds):
    kmap = assemble_K1(grid_1d, backgrounds)
    assert kmap.matrix.shape == (2 * len(backgrounds), 2 * grid_1d.interior.size)
    n_cells = kmap.cells.size
    for j in (0, 7, 15, n_cells - 1):
        cell = kmap.cells[j]
        unit = np.zeros(grid_1d.n_nodes)
        unit[cell] = 1.0
        for block, zeta in ((0, Susceptibility(unit, np.zeros_like(unit))),
                            (1, Susceptibility(np.zeros_like(unit), unit))):
            direct = np.concatenate([compute_K(1, [zeta], bg)[grid_1d.boundary] for bg in backgrounds])
            column = kmap.matrix[:, block * n_cells + j]
            np.testing.assert_allclose(column, direct, rtol=1e-10, atol=1e-14)


def test_K1_apply_matches_linearized_traces(grid_1d, backgrounds, small_zeta):
    kmap = assemble_K1(grid_1d, backgrounds)
    direct = np.concatenate([compute_K(1, [small_zeta], bg)[grid_1d.boundary] for bg in backgrounds])
    np.testing.assert_allclose(kmap.apply(small_zeta), direct, rtol=1e-10, atol=1e-14)


def test_K1_unknown_selection(grid_1d, backgrounds):
    both = assemble_K1(grid_1d, backgrounds)
    alpha = assemble_K1(grid_1d, backgrounds, unknowns="alpha")
    beta = assemble_K1(grid_1d, backgrounds, unknowns="beta", cells=[10, 16])
    n = grid_1d.interior.size
    np.testing.assert_array_equal(alpha.matrix, both.matrix[:, :n])
    assert beta.matrix.shape == (both.matrix.shape[0], 2)
    cols = beta.columns()
    assert list(cols["block"]) == ["beta", "beta"] and list(cols["node"]) == [10, 16]
    z = beta.to_susceptibility([1.0, 2.0])
    assert z.beta[16] == 2.0 and not z.alpha.any()
    np.testing.assert_array_equal(beta.to_vector(z), [1.0, 2.0])
    with pytest.raises(DimensionError):
        beta.to_susceptibility([1.0])


def test_K1_rejects_bad_input(grid_1d, grid_disk, backgrounds):
    with pytest.raises(ConfigurationError):
        assemble_K1(grid_1d, [])
    with pytest.raises(ConfigurationError):
        assemble_K1(grid_1d, backgrounds, unknowns="gamma")
    with pytest.raises(DimensionError):
        assemble_K1(grid_disk, backgrounds)


def test_K1_blocks_scale_with_source_amplitude(grid_1d, solver_1d):
    pair = [solve_background(grid_1d, SourceSpec((0.0,), s, 1.0), solver_1d) for s in (1.0, 2.0)]
    kmap = assemble_K1(grid_1d, pair)
    n = kmap.cells.size
    single, double = kmap.matrix[:2], kmap.matrix[2:]
    np.testing.assert_allclose(double[:, :n], 2.0 * single[:, :n], rtol=1e-12)
    np.testing.assert_allclose(double[:, n:], 8.0 * single[:, n:], rtol=1e-12)


def test_K1_rejects_boundary_cells(grid_1d, backgrounds):
    with pytest.raises(ConfigurationError):
        assemble_K1(grid_1d, backgrounds, cells=[0, 16])
    kmap = assemble_K1(grid_1d, backgrounds)
    z = kmap.to_susceptibility(np.ones(kmap.matrix.shape[1]))
    assert not z.alpha[grid_1d.boundary].any() and not z.beta[grid_1d.boundary].any()


def test_scattering_data_shape(grid_1d):
    with pytest.raises(DimensionError):
        ScatteringData(np.zeros((2, 3)), sources=[None, None], receivers=np.zeros((2, 1)))
    data = ScatteringData(np.full((2, 2), 3.0), sources=[None, None], receivers=np.zeros((2, 1)))
    assert data.norm() == 3.0
    assert data.vector().shape == (4,)


def test_data_is_nonlinear_in_source_amplitude(grid_1d, solver_1d, small_zeta):
    pair = [solve_background(grid_1d, SourceSpec((0.0,), s, 1.0), solver_1d) for s in (1.0, 2.0)]
    phi = synthesize(grid_1d, pair, small_zeta).phi
    assert np.abs(phi[1] - 2.0 * phi[0]).max() > 1e-3 * np.abs(phi[1]).max()
    linear = Susceptibility(small_zeta.alpha, np.zeros_like(small_zeta.beta))
    phi = synthesize(grid_1d, pair, linear).phi
    np.testing.assert_allclose(phi[1], 2.0 * phi[0], rtol=1e-10)


# ------------------------------------------------------------------
# inverse series
# ------------------------------------------------------------------

def test_single_cell_linear_reduction(grid_1d, backgrounds):
    mid = grid_1d.n_nodes // 2
    alpha = np.zeros(grid_1d.n_nodes)
    alpha[mid] = 0.01
    truth = Susceptibility(alpha, np.zeros_like(alpha))
    data = synthesize(grid_1d, backgrounds, truth)
    kmap = assemble_K1(grid_1d, backgrounds, cells=[mid], unknowns="alpha")
    rec, diag = reconstruct(data, 1, build_pinv(kmap), kmap, backgrounds)
    assert abs(rec.alpha[mid] - 0.01) <= 0.1 * 0.01
    assert not rec.beta.any()
    assert len(diag.term_norms) == 1


def test_inverse_series_improves_order_by_order(grid_1d, backgrounds):
    kmap = assemble_K1(grid_1d, backgrounds)
    pinv = build_pinv(kmap, tau=5e-2)
    shape = np.concatenate([bump(grid_1d, 1.0)[kmap.cells], bump(grid_1d, 0.5, center=0.4)[kmap.cells]])
    x_true = pinv.Vt.T @ (pinv.Vt @ shape)
    x_true *= 1e-4 / np.abs(x_true).max()
    truth = kmap.to_susceptibility(x_true)

    data = synthesize(grid_1d, backgrounds, truth)
    cache = ForwardTermCache()
    _, diag = reconstruct(data, 3, pinv, kmap, backgrounds, cache=cache)
    errors = [np.linalg.norm(kmap.to_vector(z) - x_true) / np.linalg.norm(x_true) for z in diag.partial_sums]
    assert errors[0] < 0.5
    assert errors[1] < errors[0]
    assert errors[2] <= errors[1]
    assert diag.cache_stats["entries"] > 0
    assert list(diag.term_norms["term"]) == [1, 2, 3]


def test_first_term_is_pseudoinverse_of_data(grid_1d, backgrounds, small_zeta):
    kmap = assemble_K1(grid_1d, backgrounds)
    pinv = build_pinv(kmap)
    data = synthesize(grid_1d, backgrounds, small_zeta)
    terms = inverse_terms(data, 2, pinv, kmap, backgrounds)
    np.testing.assert_allclose(kmap.to_vector(terms[0]), pinv.apply(data.vector()))
    assert len(terms) == 2


def test_radius_warning_exactly_when_exceeded(grid_1d, backgrounds, small_zeta):
    kmap = assemble_K1(grid_1d, backgrounds)
    pinv = build_pinv(kmap)
    data = synthesize(grid_1d, backgrounds, small_zeta)
    first = kmap.to_susceptibility(pinv.apply(data.vector())).sup_norm()

    with warnings.catch_warnings():
        warnings.simplefilter("error", ConvergenceRadiusWarning)
        _, diag = reconstruct(data, 1, pinv, kmap, backgrounds, radius=2.0 * first)
    assert not diag.radius_exceeded

    for radius in (0.5 * first, first):
        with pytest.warns(ConvergenceRadiusWarning):
            _, diag = reconstruct(data, 1, pinv, kmap, backgrounds, radius=radius)
        assert diag.radius_exceeded


def test_inverse_terms_argument_checks(grid_1d, backgrounds, small_zeta):
    kmap = assemble_K1(grid_1d, backgrounds)
    pinv = build_pinv(kmap)
    data = synthesize(grid_1d, backgrounds, small_zeta)
    with pytest.raises(ConfigurationError):
        inverse_terms(data, 0, pinv, kmap, backgrounds)
    with pytest.raises(ConfigurationError):
        inverse_terms(data, 13, pinv, kmap, backgrounds)
    with pytest.raises(DimensionError):
        inverse_terms(data, 2, pinv, kmap, backgrounds[:-1])


def test_threads_do_not_change_result(grid_1d, backgrounds, small_zeta):
    kmap = assemble_K1(grid_1d, backgrounds)
    pinv = build_pinv(kmap)
    data = synthesize(grid_1d, backgrounds, small_zeta)
    serial, _ = reconstruct(data, 3, pinv, kmap, backgrounds, threads=1)
    pooled, _ = reconstruct(data, 3, pinv, kmap, backgrounds, threads=4)
    np.testing.assert_array_equal(serial.alpha, pooled.alpha)
    np.testing.assert_array_equal(serial.beta, pooled.beta)
