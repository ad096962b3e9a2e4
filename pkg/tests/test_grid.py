import numpy as np
import pytest

from chcontrol.grid import FieldPair, StripGeometry, StripGrid


@pytest.fixture(scope="module")
def grid():
    return StripGrid(StripGeometry(Lx=2.0, Ly=1.0, Nx=16, Ny=8))


def _rand_pair(grid, rng):
    g = grid.geom
    return FieldPair(
        rng.standard_normal((g.Ny, g.Nx)),
        rng.standard_normal(g.Nx),
        rng.standard_normal(g.Nx),
    )


def test_geometry_validation():
    with pytest.raises(ValueError):
        StripGeometry(1.0, 1.0, 3, 8)
    with pytest.raises(ValueError):
        StripGeometry(1.0, -1.0, 8, 8)


def test_quadrature_weight_sums(grid):
    g = grid.geom
    assert grid.weights.bulk.sum() == pytest.approx(g.Lx * g.Ly, rel=1e-14)
    assert grid.weights.boundary.sum() == pytest.approx(2 * g.Lx, rel=1e-14)
    assert np.all(grid.weights.bulk > 0) and np.all(grid.weights.boundary > 0)


def test_laplacian_annihilates_constants(grid):
    v = FieldPair.constant(3.7, grid.geom)
    assert np.max(np.abs(grid.laplacian_bulk(v))) < 1e-12
    assert np.max(np.abs(grid.laplace_beltrami(v.bottom))) < 1e-12


def test_laplacian_fourier_mode(grid):
    # single x-mode is an exact eigenvector of the discrete operator
    g = grid.geom
    v = FieldPair.from_function(lambda x, y: np.cos(2 * np.pi * x / g.Lx), g)
    lam = 2.0 * (1.0 - np.cos(2 * np.pi * g.hx / g.Lx)) / g.hx**2
    lap = grid.laplacian_bulk(v)
    assert np.max(np.abs(lap + lam * v.bulk)) < 1e-10
    # and the discrete eigenvalue approaches the analytic one at O(hx^2)
    assert lam == pytest.approx((2 * np.pi / g.Lx) ** 2, rel=0.05)


def test_laplacian_linear_in_y(grid):
    g = grid.geom
    v = FieldPair.from_function(lambda x, y: y, g)
    lap = grid.laplacian_bulk(v)
    # pure 5-point rows see a linear function: exactly zero there
    assert np.max(np.abs(lap[2 : g.Ny - 2, :])) < 1e-12
    # wall-coupled rows are nonzero by design
    assert np.max(np.abs(lap[0, :])) > 1e-3


def test_laplace_beltrami_modes(grid):
    g = grid.geom
    x = g.x_nodes()
    v = np.cos(2 * np.pi * x / g.Lx)
    lam = 2.0 * (1.0 - np.cos(2 * np.pi * g.hx / g.Lx)) / g.hx**2
    assert np.max(np.abs(grid.laplace_beltrami(v) + lam * v)) < 1e-10
    alt = np.where(np.arange(g.Nx) % 2 == 0, 1.0, -1.0)
    assert np.max(np.abs(grid.laplace_beltrami(alt) + (4.0 / g.hx**2) * alt)) < 1e-10


def test_normal_derivative_constant_and_linear(grid):
    g = grid.geom
    c = FieldPair.constant(2.0, g)
    bot, top = grid.normal_derivative(c)
    assert np.max(np.abs(bot)) < 1e-12 and np.max(np.abs(top)) < 1e-12
    v = FieldPair.from_function(lambda x, y: y, g)
    bot, top = grid.normal_derivative(v)
    assert np.max(np.abs(bot + 1.0)) < 1e-12
    assert np.max(np.abs(top - 1.0)) < 1e-12


def test_normal_derivative_quadratic(grid):
    # 3-point one-sided stencil is exact on quadratics: d(y^2)/dnu is
    # 0 at the bottom and +2*Ly at the top of a [0, Ly] strip
    g = grid.geom
    v = FieldPair.from_function(lambda x, y: y**2, g)
    bot, top = grid.normal_derivative(v)
    assert np.max(np.abs(bot)) < 1e-11
    assert np.max(np.abs(top - 2.0 * g.Ly)) < 1e-11


def test_generalized_mean(grid):
    g = grid.geom
    assert grid.generalized_mean(FieldPair.constant(1.0, g)) == pytest.approx(1.0, abs=1e-14)
    v = FieldPair.zeros(g)
    v.bottom[:] = 1.0
    v.top[:] = 1.0
    expect = 2 * g.Lx / (g.Lx * g.Ly + 2 * g.Lx)
    assert grid.generalized_mean(v) == pytest.approx(expect, rel=1e-14)
    w = FieldPair.from_function(lambda x, y: np.sin(2 * np.pi * x / g.Lx), g)
    assert abs(grid.generalized_mean(w)) < 1e-14


def test_inner_products(grid):
    g = grid.geom
    rng = np.random.default_rng(3)
    v = _rand_pair(grid, rng)
    assert grid.inner_product_H(v, v) > 0
    assert grid.inner_product_H(FieldPair.zeros(g), FieldPair.zeros(g)) == 0.0
    one = FieldPair.constant(1.0, g)
    assert grid.inner_product_H(one, one) == pytest.approx(g.Lx * g.Ly + 2 * g.Lx, rel=1e-14)
    assert abs(grid.inner_product_V0(one, v)) < 1e-12
    assert grid.inner_product_V0(v, v) >= 0


def test_stiffness_row_sums_vanish(grid):
    ones = np.ones(grid.geom.n_total)
    assert np.max(np.abs(grid.K @ ones)) < 1e-12


def test_summation_by_parts(grid):
    # sum_bulk lap(v) w dA - sum_bdry (dnu v - lapG vG) w ds = -<v, w>_V0
    rng = np.random.default_rng(7)
    g = grid.geom
    for _ in range(5):
        v = _rand_pair(grid, rng)
        w = _rand_pair(grid, rng)
        lap = grid.laplacian_bulk(v)
        dn_b, dn_t = grid.normal_derivative(v)
        lb_b = grid.laplace_beltrami(v.bottom)
        lb_t = grid.laplace_beltrami(v.top)
        lhs = g.hx * g.hy * np.sum(lap * w.bulk)
        lhs -= g.hx * (np.sum((dn_b - lb_b) * w.bottom) + np.sum((dn_t - lb_t) * w.top))
        rhs = -grid.inner_product_V0(v, w)
        assert abs(lhs - rhs) < 1e-12 * max(1.0, abs(rhs))


def test_translation_equivariance(grid):
    # the operators commute with x-shifts; matvec reassociation leaves
    # only last-ulp noise
    rng = np.random.default_rng(11)
    v = _rand_pair(grid, rng)
    shift = 5
    vs = FieldPair(
        np.roll(v.bulk, shift, axis=1), np.roll(v.bottom, shift), np.roll(v.top, shift)
    )
    lap, lap_s = grid.laplacian_bulk(v), grid.laplacian_bulk(vs)
    scale = np.max(np.abs(lap))
    assert np.max(np.abs(np.roll(lap, shift, axis=1) - lap_s)) < 1e-12 * scale
    bot, top = grid.normal_derivative(v)
    bot_s, top_s = grid.normal_derivative(vs)
    assert np.max(np.abs(np.roll(bot, shift) - bot_s)) < 1e-11
    assert np.max(np.abs(np.roll(top, shift) - top_s)) < 1e-11
    lb, lb_s = grid.laplace_beltrami(v.bottom), grid.laplace_beltrami(vs.bottom)
    assert np.max(np.abs(np.roll(lb, shift) - lb_s)) < 1e-11


def test_convection_matrix_structure(grid):
    g = grid.geom
    rng = np.random.default_rng(5)
    # shear field: constant along each row, no vertical component
    f = rng.standard_normal(g.Ny)
    ux = np.repeat(f[:, None], g.Nx, axis=1)
    uy = np.zeros((g.Ny - 1, g.Nx))
    assert np.max(np.abs(grid.divergence_edges(ux, uy))) < 1e-14
    C = grid.convection_matrix(ux, uy)
    col_sums = np.asarray(np.abs(C.sum(axis=0))).ravel()
    assert col_sums.max() < 1e-13
    skew = C + C.T
    assert abs(skew).max() < 1e-13
    # trace rows carry no convection
    rows = np.abs(C[g.n_bulk :, :]).sum()
    assert rows == 0.0


def test_convection_streamfunction_divfree(grid):
    g = grid.geom
    rng = np.random.default_rng(9)
    # psi at corners (Ny+1 levels); wall rows constant => u.n = 0
    psi = rng.standard_normal((g.Ny + 1, g.Nx))
    psi[0, :] = 0.3
    psi[-1, :] = -0.8
    ux = (psi[1:, :] - psi[:-1, :]) / g.hy
    uy = -(psi[1:-1, :] - np.roll(psi[1:-1, :], 1, axis=1)) / g.hx
    assert np.max(np.abs(grid.divergence_edges(ux, uy))) < 1e-12
    C = grid.convection_matrix(ux, uy)
    assert abs(C + C.T).max() < 1e-12
