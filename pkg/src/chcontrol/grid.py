"""Periodic-strip geometry and the coupled bulk/surface discrete operators.

The domain is a strip, periodic in x, with two boundary circles at y = 0
and y = Ly.  Bulk unknowns live at cell centers (Nx*Ny nodes); each circle
carries Nx additional boundary nodes.  A scalar field is therefore the
triple (bulk, bottom trace, top trace), packed into one vector of length
Nx*Ny + 2*Nx.

The discrete weak form is generated by a single symmetric stiffness matrix
K and a diagonal quadrature matrix M.  K combines

  * periodic second differences in x over every bulk row,
  * second differences in y between adjacent bulk rows,
  * a 3-point one-sided coupling between each boundary node and its two
    nearest bulk rows (this makes the discrete normal derivative
    second-order accurate at the wall),
  * periodic second differences along each boundary circle
    (Laplace-Beltrami part).

The strong-form operators (bulk Laplacian, normal derivative,
Laplace-Beltrami) are read off K by splitting its rows and dividing by the
quadrature weights, so summation by parts

    sum_bulk lap(v) w dA  -  sum_bdry (dnu(v) - lapG(v)) w ds  =  -ip_v0(v, w)

holds to machine precision by construction, and weak and strong statements
of the evolution equations are interchangeable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class StripGeometry:
    """Periodic strip: x in [0, Lx) periodic, y in (0, Ly), walls at y=0, Ly."""

    Lx: float
    Ly: float
    Nx: int
    Ny: int

    def __post_init__(self):
        if self.Nx < 4 or self.Ny < 4:
            raise ValueError(f"need Nx >= 4 and Ny >= 4, got {self.Nx} x {self.Ny}")
        if self.Lx <= 0 or self.Ly <= 0:
            raise ValueError("domain lengths must be positive")

    @property
    def hx(self) -> float:
        return self.Lx / self.Nx

    @property
    def hy(self) -> float:
        return self.Ly / self.Ny

    @property
    def n_bulk(self) -> int:
        return self.Nx * self.Ny

    @property
    def n_total(self) -> int:
        return self.Nx * self.Ny + 2 * self.Nx

    def x_nodes(self) -> np.ndarray:
        return np.arange(self.Nx) * self.hx

    def y_nodes(self) -> np.ndarray:
        """Bulk row centers, bottom row first."""
        return (np.arange(self.Ny) + 0.5) * self.hy


@dataclass
class FieldPair:
    """A bulk grid function together with its two boundary traces.

    bulk has shape (Ny, Nx) with row 0 nearest the bottom wall; bottom and
    top are the boundary circle values (length Nx each).  The traces are
    genuine unknowns shared between the bulk stencils and the surface
    operators, so the trace constraint holds structurally.
    """

    bulk: np.ndarray
    bottom: np.ndarray
    top: np.ndarray

    def copy(self) -> "FieldPair":
        return FieldPair(self.bulk.copy(), self.bottom.copy(), self.top.copy())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.bulk.ravel(), self.bottom, self.top])

    @staticmethod
    def from_vector(vec: np.ndarray, geom: StripGeometry) -> "FieldPair":
        nb = geom.n_bulk
        nx = geom.Nx
        return FieldPair(
            vec[:nb].reshape(geom.Ny, geom.Nx).copy(),
            vec[nb : nb + nx].copy(),
            vec[nb + nx :].copy(),
        )

    @staticmethod
    def constant(value: float, geom: StripGeometry) -> "FieldPair":
        return FieldPair(
            np.full((geom.Ny, geom.Nx), float(value)),
            np.full(geom.Nx, float(value)),
            np.full(geom.Nx, float(value)),
        )

    @staticmethod
    def zeros(geom: StripGeometry) -> "FieldPair":
        return FieldPair.constant(0.0, geom)

    @staticmethod
    def from_function(f, geom: StripGeometry) -> "FieldPair":
        """Evaluate f(x, y) on all nodes (broadcasting over arrays)."""
        x = geom.x_nodes()
        y = geom.y_nodes()
        bulk = f(x[None, :], y[:, None]) * np.ones((geom.Ny, geom.Nx))
        bottom = f(x, 0.0) * np.ones(geom.Nx)
        top = f(x, geom.Ly) * np.ones(geom.Nx)
        return FieldPair(bulk, bottom, top)

    def min(self) -> float:
        return min(self.bulk.min(), self.bottom.min(), self.top.min())

    def max(self) -> float:
        return max(self.bulk.max(), self.bottom.max(), self.top.max())


@dataclass(frozen=True)
class QuadratureWeights:
    """Midpoint quadrature: area hx*hy per bulk node, arc length hx per
    boundary node.  Sums reproduce |Omega| = Lx*Ly and |Gamma| = 2*Lx
    exactly."""

    bulk: np.ndarray
    boundary: np.ndarray

    @staticmethod
    def for_geometry(geom: StripGeometry) -> "QuadratureWeights":
        return QuadratureWeights(
            np.full(geom.n_bulk, geom.hx * geom.hy),
            np.full(2 * geom.Nx, geom.hx),
        )


def _edge_coo(rows, cols, coeffs, n):
    """Symmetric edge-difference form sum_e c_e (v_P - v_Q)^2 as a COO matrix."""
    r = np.concatenate([rows, cols, rows, cols])
    c = np.concatenate([rows, cols, cols, rows])
    v = np.concatenate([coeffs, coeffs, -coeffs, -coeffs])
    return sp.coo_matrix((v, (r, c)), shape=(n, n))


class StripGrid:
    """Discrete operator workspace for a fixed geometry.

    Assembles the quadrature matrix M (diagonal) and the coupled stiffness
    K once; every operator below is a cheap re-slicing of K v.  Instances
    are immutable after construction and safe to share across threads.
    """

    def __init__(self, geom: StripGeometry):
        self.geom = geom
        self.weights = QuadratureWeights.for_geometry(geom)
        self.omega_measure = geom.Lx * geom.Ly
        self.gamma_measure = 2.0 * geom.Lx
        self.total_measure = self.omega_measure + self.gamma_measure

        self.mass_diag = np.concatenate([self.weights.bulk, self.weights.boundary])
        self.M = sp.diags(self.mass_diag, format="csr")

        self.K_wall = self._assemble_wall().tocsr()
        self.K_surf = self._assemble_surface().tocsr()
        self.K = (self._assemble_bulk() + self.K_wall + self.K_surf).tocsr()

    # node indexing: bulk (j, i) -> j*Nx + i, then bottom circle, then top
    def _bulk_index(self, j, i):
        return j * self.geom.Nx + i

    def _bottom_index(self, i):
        return self.geom.n_bulk + i

    def _top_index(self, i):
        return self.geom.n_bulk + self.geom.Nx + i

    def _assemble_bulk(self):
        g = self.geom
        nx, ny = g.Nx, g.Ny
        jj, ii = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
        # periodic x edges, weight hy/hx
        rows_x = self._bulk_index(jj, ii).ravel()
        cols_x = self._bulk_index(jj, (ii + 1) % nx).ravel()
        cx = np.full(rows_x.size, g.hy / g.hx)
        # interior y edges, weight hx/hy
        jj2, ii2 = np.meshgrid(np.arange(ny - 1), np.arange(nx), indexing="ij")
        rows_y = self._bulk_index(jj2, ii2).ravel()
        cols_y = self._bulk_index(jj2 + 1, ii2).ravel()
        cy = np.full(rows_y.size, g.hx / g.hy)
        return _edge_coo(
            np.concatenate([rows_x, rows_y]),
            np.concatenate([cols_x, cols_y]),
            np.concatenate([cx, cy]),
            g.n_total,
        )

    def _assemble_wall(self):
        # 3-point one-sided wall coupling: the quadratic form
        #   3*hx/hy (v_B - v_0)^2 - hx/(3*hy) (v_B - v_1)^2
        # reproduces the second-order one-sided normal derivative
        # (8 v_B - 9 v_0 + v_1)/(3 hy) in the boundary rows of K.
        g = self.geom
        i = np.arange(g.Nx)
        c_near = np.full(g.Nx, 3.0 * g.hx / g.hy)
        c_far = np.full(g.Nx, -g.hx / (3.0 * g.hy))
        rows = np.concatenate(
            [
                self._bottom_index(i),
                self._bottom_index(i),
                self._top_index(i),
                self._top_index(i),
            ]
        )
        cols = np.concatenate(
            [
                self._bulk_index(0, i),
                self._bulk_index(1, i),
                self._bulk_index(g.Ny - 1, i),
                self._bulk_index(g.Ny - 2, i),
            ]
        )
        coeffs = np.concatenate([c_near, c_far, c_near, c_far])
        return _edge_coo(rows, cols, coeffs, g.n_total)

    def _assemble_surface(self):
        g = self.geom
        i = np.arange(g.Nx)
        ip = (i + 1) % g.Nx
        c = np.full(g.Nx, 1.0 / g.hx)
        rows = np.concatenate([self._bottom_index(i), self._top_index(i)])
        cols = np.concatenate([self._bottom_index(ip), self._top_index(ip)])
        return _edge_coo(rows, cols, np.concatenate([c, c]), g.n_total)

    # ------------------------------------------------------------------
    # differential operators
    # ------------------------------------------------------------------

    def _as_vector(self, v) -> np.ndarray:
        if isinstance(v, FieldPair):
            self._check_shapes(v)
            return v.to_vector()
        v = np.asarray(v, dtype=float)
        if v.shape != (self.geom.n_total,):
            raise ValueError(f"expected packed vector of length {self.geom.n_total}")
        return v

    def _check_shapes(self, v: FieldPair):
        g = self.geom
        if v.bulk.shape != (g.Ny, g.Nx) or v.bottom.shape != (g.Nx,) or v.top.shape != (g.Nx,):
            raise ValueError(
                f"field shapes {v.bulk.shape}/{v.bottom.shape}/{v.top.shape} do not "
                f"match grid {g.Ny} x {g.Nx}"
            )

    def laplacian_bulk(self, v) -> np.ndarray:
        """Bulk Laplacian, shape (Ny, Nx); wall-adjacent rows couple to the
        traces through the summation-by-parts-compatible stencil."""
        g = self.geom
        kv = self.K @ self._as_vector(v)
        return -(kv[: g.n_bulk] / (g.hx * g.hy)).reshape(g.Ny, g.Nx)

    def laplace_beltrami(self, v_gamma: np.ndarray) -> np.ndarray:
        """Periodic second difference along one boundary circle (length Nx)."""
        v = np.asarray(v_gamma, dtype=float)
        if v.shape != (self.geom.Nx,):
            raise ValueError(f"expected boundary array of length {self.geom.Nx}")
        hx = self.geom.hx
        return (np.roll(v, -1) - 2.0 * v + np.roll(v, 1)) / (hx * hx)

    def normal_derivative(self, v):
        """Outward normal derivative on (bottom, top) circles.

        Second-order one-sided stencil (8 v_wall - 9 v_near + v_far)/(3 hy),
        sign convention: nu points out of the strip.
        """
        if self.geom.Ny < 3:
            raise ValueError("normal derivative stencil needs Ny >= 3")
        g = self.geom
        vec = self._as_vector(v)
        kv = self.K_wall @ vec
        dn = kv[g.n_bulk :] / g.hx
        return dn[: g.Nx].copy(), dn[g.Nx :].copy()

    # ------------------------------------------------------------------
    # quadrature, means, inner products
    # ------------------------------------------------------------------

    def integral(self, v) -> float:
        """Combined integral over bulk and both circles."""
        return float(self.mass_diag @ self._as_vector(v))

    def generalized_mean(self, v) -> float:
        """(int_Omega v + int_Gamma v) / (|Omega| + |Gamma|)."""
        return self.integral(v) / self.total_measure

    def inner_product_H(self, v, w) -> float:
        return float(self._as_vector(v) @ (self.mass_diag * self._as_vector(w)))

    def norm_H(self, v) -> float:
        return float(np.sqrt(max(self.inner_product_H(v, v), 0.0)))

    def inner_product_V0(self, v, w) -> float:
        """Coupled stiffness form: discrete gradients in the bulk plus
        tangential gradients along the circles (and the wall coupling)."""
        return float(self._as_vector(v) @ (self.K @ self._as_vector(w)))

    def norm_V0(self, v) -> float:
        return float(np.sqrt(max(self.inner_product_V0(v, v), 0.0)))

    # ------------------------------------------------------------------
    # edge utilities (convection, gradients of adjoint fields)
    # ------------------------------------------------------------------

    def x_edge_gradient(self, bulk: np.ndarray) -> np.ndarray:
        """d/dx at the Ny x Nx periodic x-edges; edge (j, i) sits between
        bulk nodes (j, i) and (j, i+1)."""
        return (np.roll(bulk, -1, axis=1) - bulk) / self.geom.hx

    def y_edge_gradient(self, bulk: np.ndarray) -> np.ndarray:
        """d/dy at the (Ny-1) x Nx interior y-edges."""
        return (bulk[1:, :] - bulk[:-1, :]) / self.geom.hy

    def divergence_edges(self, ux: np.ndarray, uy: np.ndarray) -> np.ndarray:
        """Cell divergence of an edge velocity (zero normal flux at walls)."""
        g = self.geom
        div = (ux - np.roll(ux, 1, axis=1)) / g.hx
        uy_full = np.zeros((g.Ny + 1, g.Nx))
        uy_full[1:-1, :] = uy
        div += (uy_full[1:, :] - uy_full[:-1, :]) / g.hy
        return div

    def convection_matrix(self, ux: np.ndarray, uy: np.ndarray) -> sp.csr_matrix:
        """Weak-form convection operator C(u) with central fluxes.

        Row P of C(u) rho is the net outward flux sum_e u_e |e| (rho_P + rho_Q)/2
        of the cell at P; columns sum to zero (testing with a constant gives
        zero), and C is skew-symmetric whenever the edge field is discretely
        divergence free.  Boundary trace rows carry no convection.
        """
        g = self.geom
        if ux.shape != (g.Ny, g.Nx):
            raise ValueError("ux must live on the Ny x Nx x-edges")
        if uy.shape != (g.Ny - 1, g.Nx):
            raise ValueError("uy must live on the (Ny-1) x Nx interior y-edges")
        jj, ii = np.meshgrid(np.arange(g.Ny), np.arange(g.Nx), indexing="ij")
        p = self._bulk_index(jj, ii).ravel()
        q = self._bulk_index(jj, (ii + 1) % g.Nx).ravel()
        w = (0.5 * g.hy * ux).ravel()
        jj2, ii2 = np.meshgrid(np.arange(g.Ny - 1), np.arange(g.Nx), indexing="ij")
        p2 = self._bulk_index(jj2, ii2).ravel()
        q2 = self._bulk_index(jj2 + 1, ii2).ravel()
        w2 = (0.5 * g.hx * uy).ravel()
        rows = np.concatenate([p, p, q, q, p2, p2, q2, q2])
        cols = np.concatenate([p, q, p, q, p2, q2, p2, q2])
        vals = np.concatenate([w, w, -w, -w, w2, w2, -w2, -w2])
        return sp.coo_matrix((vals, (rows, cols)), shape=(g.n_total, g.n_total)).tocsr()

    def rho_grad_edges(self, rho_bulk: np.ndarray, p_bulk: np.ndarray):
        """Edge quadrature of rho * grad(p): gx[j,i] = hx*hy * rhobar_e * dp/dx|_e
        on x-edges and the analogous y part.  The convection pairing satisfies
        <C(u) rho, p> = - sum_e u_e * (this), which is what the control
        gradient needs."""
        g = self.geom
        rbar_x = 0.5 * (rho_bulk + np.roll(rho_bulk, -1, axis=1))
        gx = g.hx * g.hy * rbar_x * self.x_edge_gradient(p_bulk)
        rbar_y = 0.5 * (rho_bulk[1:, :] + rho_bulk[:-1, :])
        gy = g.hx * g.hy * rbar_y * self.y_edge_gradient(p_bulk)
        return gx, gy
