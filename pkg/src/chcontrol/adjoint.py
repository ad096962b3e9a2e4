"""Backward-in-time adjoint of the discrete forward stepping.

The adjoint is the exact transpose of the linearized forward steps, not a
separate discretization: each backward level reuses the LU factorization
of the converged step system and solves with its transpose.  Displaying
the multiplier blocks as the pair (p, q), the backward sweep is a
consistent discretization of

    -d/dt (p + tau q) - lap q + phi(alpha) h''(rho) q + pi'(rho) q
        - u . grad p = b1 (rho - target_Q)              in the bulk,

coupled with the stationary relation

    <grad p, grad v> + <gradG pG, gradG vG> = <q, v> + <qG, vG>,

boundary analogs, and terminal data (p + tau q)(T) given by the terminal
misfit.  The stationary relation is part of every transpose solve, so it
holds to solver precision at every level, and testing it with the
constant pair shows mean(q) = 0 exactly.

In the obstacle limit the transpose of the active-set constraint rows
replaces the quench curvature term: q vanishes on contact nodes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cost import CostSpec, running_misfit, terminal_misfit
from .grid import FieldPair, StripGrid
from .linops import NOperator, SolverError
from .potentials import QuenchParams, h_second
from .state import StateSolution, pi_prime_packed


@dataclass
class TerminalData:
    """Pointwise terminal misfit feeding the backward sweep."""

    combo: FieldPair  # (p + tau q) at the final level
    misfit: FieldPair  # [b3 (rho(T) - target_Omega); b4 (...)]


@dataclass
class AdjointSolution:
    mode: str
    alpha: Optional[float]
    eps: Optional[float]
    p: List[Optional[FieldPair]]
    q: List[Optional[FieldPair]]
    terminal: TerminalData
    eta: List  # (gx, gy) edge gradients of p per level, None at 0
    mean_q: np.ndarray  # per level 1..K
    norm_q: np.ndarray
    norm_Nq_tau_q: np.ndarray  # ||N q + tau q||_V0 per level
    eq2_residual: float  # max relative residual of the stationary relation
    dt: float
    norm_Nq: np.ndarray = None  # ||N q||_V0 per level

    @property
    def n_steps(self) -> int:
        return len(self.p) - 1


def _adjoint_rhs(grid, cost, state, k, p_next, q_next, pi_prime_k, dt, tau):
    """Right-hand side of the level-k transpose solve (indexed by the
    forward unknowns: rho block then mu block)."""
    mdiag = grid.mass_diag
    rho_k = state.rho[k]
    rhs_rho = mdiag * running_misfit(grid, cost, rho_k, k)
    if k == state.n_steps:
        rhs_rho += mdiag * terminal_misfit(grid, cost, rho_k) / dt
    if p_next is not None:
        rhs_rho += mdiag * (p_next / dt + tau * q_next / dt - pi_prime_k * q_next)
    return np.concatenate([rhs_rho, np.zeros(grid.geom.n_total)])


def solve_adjoint(problem, state: StateSolution, u=None, check_tol: float = 1e-10) -> AdjointSolution:
    """Backward sweep through the stored step factorizations.

    The state must carry its factors (solve_forward keeps them); u is only
    used for interface symmetry and may be omitted.  Verifies the
    stationary p-q relation at every level against check_tol.
    """
    grid: StripGrid = problem.grid
    cost: CostSpec = problem.cost
    tau = problem.phys.tau
    dt = state.dt
    n = grid.geom.n_total
    n_steps = state.n_steps
    if state.step_factors is None or state.step_factors[1] is None:
        raise SolverError("state was solved without stored step factors")

    nop = NOperator(grid)
    p_levels: List[Optional[FieldPair]] = [None] * (n_steps + 1)
    q_levels: List[Optional[FieldPair]] = [None] * (n_steps + 1)
    eta: List = [None] * (n_steps + 1)
    mean_q = np.zeros(n_steps + 1)
    norm_q = np.zeros(n_steps + 1)
    norm_nq = np.zeros(n_steps + 1)
    norm_nq_plain = np.zeros(n_steps + 1)
    eq2_res = 0.0

    p_next = None
    q_next = None
    for k in range(n_steps, 0, -1):
        pi_prime_k = pi_prime_packed(grid, problem.potential, state.rho[k].to_vector())
        rhs = _adjoint_rhs(grid, cost, state, k, p_next, q_next, pi_prime_k, dt, tau)
        sol = state.step_factors[k].solve(rhs, trans="T")
        p = sol[:n]
        if state.mode == "obstacle":
            mask = state.active_masks[k]
            inactive_idx = np.flatnonzero(mask == 0)
            q = np.zeros(n)
            q[inactive_idx] = sol[n : n + inactive_idx.size]
        else:
            q = sol[n:]

        # stationary relation K p = M q, part of the transpose system
        r = grid.K @ p - grid.mass_diag * q
        scale = max(np.linalg.norm(grid.mass_diag * q), 1e-300)
        eq2_res = max(eq2_res, float(np.linalg.norm(r) / scale))

        pp = FieldPair.from_vector(p, grid.geom)
        qq = FieldPair.from_vector(q, grid.geom)
        p_levels[k] = pp
        q_levels[k] = qq
        eta[k] = (grid.x_edge_gradient(pp.bulk), grid.y_edge_gradient(pp.bulk))
        mean_q[k] = grid.generalized_mean(q)
        norm_q[k] = grid.norm_H(q)
        if norm_q[k] > 0:
            nq = nop.apply(qq).solution.to_vector()
            norm_nq[k] = grid.norm_V0(nq + tau * q)
            norm_nq_plain[k] = grid.norm_V0(nq)
        p_next, q_next = p, q

    if eq2_res > check_tol:
        raise SolverError(f"stationary p-q relation residual {eq2_res:.3e}")

    rho_T = state.rho[-1]
    misfit = FieldPair.from_vector(terminal_misfit(grid, cost, rho_T), grid.geom)
    combo = FieldPair.from_vector(
        p_levels[-1].to_vector() + tau * q_levels[-1].to_vector(), grid.geom
    )
    return AdjointSolution(
        mode=state.mode,
        alpha=state.alpha,
        eps=None,
        p=p_levels,
        q=q_levels,
        terminal=TerminalData(combo=combo, misfit=misfit),
        eta=eta,
        mean_q=mean_q,
        norm_q=norm_q,
        norm_Nq_tau_q=norm_nq,
        eq2_residual=eq2_res,
        dt=dt,
        norm_Nq=norm_nq_plain,
    )


def solve_adjoint_eps(problem, state: StateSolution, u=None, eps: float = 1e-2) -> AdjointSolution:
    """Regularized backward sweep with an extra eps * dp/dt term in the
    stationary relation and homogeneous terminal p.

    Implemented as an exact continuation of the transpose sweep: at
    eps = 0 the two coincide, so the distance to solve_adjoint's output is
    a clean monitor of the regularization error (it is monitored, never
    asserted at a rate).  Requires a quench-mode state.
    """
    if not (0.0 < eps <= 1.0):
        raise ValueError("eps must lie in (0, 1]; use solve_adjoint for eps = 0")
    if state.mode != "quench":
        raise ValueError("the regularized adjoint is defined for quench states")
    grid: StripGrid = problem.grid
    cost: CostSpec = problem.cost
    tau = problem.phys.tau
    dt = state.dt
    n = grid.geom.n_total
    n_steps = state.n_steps
    qp = QuenchParams(state.alpha, problem.quench_p)
    mdiag = grid.mass_diag
    M = grid.M
    K = grid.K

    p_levels: List[Optional[FieldPair]] = [None] * (n_steps + 1)
    q_levels: List[Optional[FieldPair]] = [None] * (n_steps + 1)
    p_next = None
    q_next = None
    for k in range(n_steps, 0, -1):
        rho_k = state.rho[k].to_vector()
        pi_prime_k = pi_prime_packed(grid, problem.potential, rho_k)
        rhs = _adjoint_rhs(grid, cost, state, k, p_next, q_next, pi_prime_k, dt, tau)
        rhs_mu = (eps / dt) * mdiag * (p_next if p_next is not None else np.zeros(n))
        rhs[n:] = rhs_mu

        ux, uy = (u.edge_fields(k - 1) if u is not None else (None, None))
        conv_t = grid.convection_matrix(ux, uy).T if u is not None else None
        a11 = M.multiply(1.0 / dt)
        if conv_t is not None:
            a11 = a11 + conv_t
        a12 = M.multiply(tau / dt) + K + sp.diags(mdiag * qp.phi * h_second(rho_k))
        a21 = K + M.multiply(eps / dt)
        system = sp.bmat([[a11, a12], [a21, -M]], format="csc")
        sol = spla.splu(system).solve(rhs)
        p, q = sol[:n], sol[n:]
        p_levels[k] = FieldPair.from_vector(p, grid.geom)
        q_levels[k] = FieldPair.from_vector(q, grid.geom)
        p_next, q_next = p, q

    rho_T = state.rho[-1]
    misfit = FieldPair.from_vector(terminal_misfit(grid, cost, rho_T), grid.geom)
    combo = FieldPair.from_vector(
        p_levels[-1].to_vector() + tau * q_levels[-1].to_vector(), grid.geom
    )
    return AdjointSolution(
        mode=state.mode,
        alpha=state.alpha,
        eps=eps,
        p=p_levels,
        q=q_levels,
        terminal=TerminalData(combo=combo, misfit=misfit),
        eta=[None] * (n_steps + 1),
        mean_q=np.array([grid.generalized_mean(q.to_vector()) if q else 0.0 for q in q_levels]),
        norm_q=np.array([grid.norm_H(q.to_vector()) if q else 0.0 for q in q_levels]),
        norm_Nq_tau_q=np.zeros(n_steps + 1),
        eq2_residual=float("nan"),
        dt=dt,
    )


@dataclass
class RepresentationResult:
    nq: FieldPair
    mean_p: Optional[float]
    residual: Optional[float]


def representation_p_from_q(
    grid: StripGrid, nop: NOperator, q_pair: FieldPair, p_pair: Optional[FieldPair] = None
) -> RepresentationResult:
    """N q, plus the mean of p when a stored p is supplied (quench mode).

    In the quench regime  p - mean(p) (1,1) = N q  holds level by level:
    both sides are computed independently here (the saddle solve for N
    versus the stored transpose solution).  In the obstacle limit only
    N q is returned; the limit system does not determine the mean.
    """
    res = nop.apply(q_pair)
    nq = res.solution
    if p_pair is None:
        return RepresentationResult(nq=nq, mean_p=None, residual=None)
    pvec = p_pair.to_vector()
    mean_p = grid.generalized_mean(pvec)
    diff = pvec - mean_p - nq.to_vector()
    scale = max(grid.norm_H(pvec), 1e-300)
    return RepresentationResult(
        nq=nq, mean_p=mean_p, residual=float(grid.norm_H(diff) / scale)
    )


def curvature_series(problem, state: StateSolution, adj: AdjointSolution) -> np.ndarray:
    """Per-level dual-norm size ||w - mean(w)||_* of the curvature term
    w = phi(alpha) h''(rho) q (bulk and traces); level 0 entry is zero."""
    if state.mode != "quench" or adj.mode != "quench":
        raise ValueError("curvature norm is a quench-mode diagnostic")
    grid: StripGrid = problem.grid
    qp = QuenchParams(state.alpha, problem.quench_p)
    nop = NOperator(grid)
    series = np.zeros(state.n_steps + 1)
    for k in range(1, state.n_steps + 1):
        rho_k = state.rho[k].to_vector()
        w = qp.phi * h_second(rho_k) * adj.q[k].to_vector()
        w0 = w - grid.generalized_mean(w)
        if grid.norm_H(w0) == 0.0:
            continue
        series[k] = nop.dual_norm_star(FieldPair.from_vector(w0, grid.geom))
    return series


def quench_curvature_norm(problem, state: StateSolution, adj: AdjointSolution) -> float:
    """Dual-norm size of the curvature term phi(alpha) h''(rho) q over the
    trajectory, the computable surrogate of the limit multiplier.

    Measured in the discrete L^2-in-time dual norm via the per-level
    series.  Purely a monitored diagnostic for the continuation study.
    """
    series = curvature_series(problem, state, adj)
    return float(np.sqrt(np.sum(state.dt * series**2)))
