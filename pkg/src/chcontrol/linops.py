"""Sparse linear algebra, the mean-zero Green operator, and damped Newton.

The Green operator inverts the coupled bulk/surface stiffness on mean-zero
data.  The mean constraint is handled by one Lagrange multiplier row
(saddle system), which keeps the factorized matrix symmetric and makes the
generalized mean of the output vanish to solver precision.  Desk-scale
problems are solved by direct sparse factorization; CG with a diagonal
preconditioner is available as a fallback.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import FieldPair, StripGrid


class SolverError(RuntimeError):
    """Linear solve did not reach the requested tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NewtonError(RuntimeError):
    """Damped Newton failed (stagnation or iteration cap)."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass
class SparseSystem:
    """A sparse operator plus metadata used by the solvers."""

    matrix: sp.spmatrix
    symmetric: bool = False

    def check_symmetry(self, rng=None, n_probes: int = 3, tol: float = 1e-10) -> bool:
        """Spot-check <Av, w> = <v, Aw> on random vectors."""
        rng = rng or np.random.default_rng(0)
        a = self.matrix.tocsr()
        n = a.shape[0]
        for _ in range(n_probes):
            v = rng.standard_normal(n)
            w = rng.standard_normal(n)
            left = w @ (a @ v)
            right = v @ (a @ w)
            if abs(left - right) > tol * max(1.0, abs(left)):
                return False
        return True


def solve_spd(system, b, tol: float = 1e-12, method: str = "direct") -> np.ndarray:
    """Solve A x = b for symmetric positive (semi-)definite A.

    Direct sparse LU is the default; ``method="cg"`` switches to conjugate
    gradients with a diagonal preconditioner.  The relative residual is
    always verified, so a singular or inconsistent system surfaces as a
    SolverError instead of silent garbage.
    """
    a = system.matrix.tocsc() if isinstance(system, SparseSystem) else sp.csc_matrix(system)
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    if method == "direct":
        try:
            x = spla.splu(a).solve(b)
        except RuntimeError as exc:
            raise SolverError(f"sparse factorization failed: {exc}") from exc
    elif method == "cg":
        precond = spla.LinearOperator(a.shape, lambda v: v / a.diagonal())
        x, info = spla.cg(a, b, rtol=tol, atol=0.0, M=precond, maxiter=10 * a.shape[0])
        if info != 0:
            res = np.linalg.norm(a @ x - b) / bnorm
            raise SolverError(f"CG did not converge (info={info})", residual=res)
    else:
        raise ValueError(f"unknown method {method!r}")
    res = np.linalg.norm(a @ x - b) / bnorm
    if not np.isfinite(res) or res > tol:
        raise SolverError(f"solve residual {res:.3e} exceeds tol {tol:.1e}", residual=res)
    return x


@dataclass
class MeanZeroSolveResult:
    solution: FieldPair
    residual: float
    iterations: int


class NOperator:
    """Green operator of the coupled Laplacian on mean-zero data.

    N g is the unique mean-zero pair xi with

        <xi, v>_V0 = <g, v>_H   for every discrete pair v,

    equivalently -lap(xi) = g in the bulk, dnu(xi) - lapG(xiG) = gG on the
    circles, mean(xi) = 0.  The saddle factorization is cached, so repeated
    applications cost one back-substitution each.
    """

    def __init__(self, grid: StripGrid, mean_tol: float = 1e-10):
        self.grid = grid
        self.mean_tol = mean_tol
        n = grid.geom.n_total
        m = grid.mass_diag.reshape(n, 1)
        saddle = sp.bmat([[grid.K, m], [m.T, None]], format="csc")
        self._lu = spla.splu(saddle)
        self._n = n

    def apply(self, g) -> MeanZeroSolveResult:
        """Apply N to a mean-zero pair; raises on nonzero-mean input."""
        grid = self.grid
        gv = g.to_vector() if isinstance(g, FieldPair) else np.asarray(g, dtype=float)
        gnorm = grid.norm_H(gv)
        mean = grid.generalized_mean(gv)
        if abs(mean) > self.mean_tol * max(gnorm, 1e-300):
            raise SolverError(
                f"apply_N requires mean-zero data: |mean| = {abs(mean):.3e}, "
                f"||g||_H = {gnorm:.3e}"
            )
        if gnorm == 0.0:
            return MeanZeroSolveResult(FieldPair.zeros(grid.geom), 0.0, 0)
        rhs = np.concatenate([grid.mass_diag * gv, [0.0]])
        sol = self._lu.solve(rhs)
        xi = sol[: self._n]
        res = np.linalg.norm(grid.K @ xi + grid.mass_diag * sol[-1] - rhs[:-1])
        res /= np.linalg.norm(rhs[:-1])
        if not np.isfinite(res) or res > 1e-9:
            raise SolverError(f"N solve residual {res:.3e}", residual=res)
        return MeanZeroSolveResult(FieldPair.from_vector(xi, grid.geom), float(res), 1)

    def apply_vector(self, gv: np.ndarray) -> np.ndarray:
        return self.apply(gv).solution.to_vector()

    def dual_norm_star(self, g) -> float:
        """||g||_* = ||N g||_V0, the discrete dual norm on mean-zero data."""
        xi = self.apply(g).solution
        return self.grid.norm_V0(xi)


def apply_N(grid_or_op, g) -> MeanZeroSolveResult:
    """Functional wrapper; prefer a cached NOperator in hot loops."""
    op = grid_or_op if isinstance(grid_or_op, NOperator) else NOperator(grid_or_op)
    return op.apply(g)


def newton_damped(
    residual: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], sp.spmatrix],
    x0: np.ndarray,
    lower: Optional[np.ndarray] = None,
    upper: Optional[np.ndarray] = None,
    tol: float = 1e-11,
    max_iter: int = 50,
    backtrack: float = 0.5,
    min_step: float = 1e-14,
):
    """Damped Newton with feasibility safeguard.

    Every iterate stays strictly inside the (lower, upper) box; the step is
    halved until the trial point is feasible and the sup-norm residual
    decreases.  Returns (x, info) where info carries the iteration count
    and final residual.
    """
    x = np.asarray(x0, dtype=float).copy()
    lo = -np.inf if lower is None else np.asarray(lower, dtype=float)
    hi = np.inf if upper is None else np.asarray(upper, dtype=float)
    if np.any(x <= lo) or np.any(x >= hi):
        raise NewtonError("initial guess is not strictly feasible")

    fx = np.asarray(residual(x), dtype=float)
    norm = float(np.max(np.abs(fx)))
    for it in range(max_iter):
        if norm <= tol:
            return x, {"iterations": it, "residual": norm}
        jac = jacobian(x)
        if sp.issparse(jac):
            delta = spla.splu(jac.tocsc()).solve(-fx)
        else:
            delta = np.linalg.solve(np.atleast_2d(jac), -np.atleast_1d(fx))
        step = 1.0
        while True:
            xt = x + step * delta
            if np.all(xt > lo) and np.all(xt < hi):
                ft = np.asarray(residual(xt), dtype=float)
                nt = float(np.max(np.abs(ft)))
                if np.isfinite(nt) and nt < norm:
                    x, fx, norm = xt, ft, nt
                    break
            step *= backtrack
            if step < min_step:
                raise NewtonError(
                    f"step collapsed below {min_step:g} at residual {norm:.3e}",
                    residual=norm,
                    iterations=it,
                )
    if norm <= tol:
        return x, {"iterations": max_iter, "residual": norm}
    raise NewtonError(
        f"no convergence in {max_iter} iterations (residual {norm:.3e})",
        residual=norm,
        iterations=max_iter,
    )
