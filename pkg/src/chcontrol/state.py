"""Forward time-stepping for the convective phase-separation system.

One implicit-Euler step couples the order parameter rho and the chemical
potential mu through (weak form, M = quadrature, K = coupled stiffness,
C = convection):

    M (rho' - rho)/dt + C(u) rho' + K mu'                          = 0
    tau M (rho' - rho)/dt + K rho' + M [xi' + pi(rho)] - M mu'     = 0

where xi' is either the quench surrogate phi(alpha) h'(rho') (smooth,
solved by damped Newton) or the obstacle multiplier with rho' in [-1, 1]
(solved by a primal-dual active-set iteration).  The smooth part pi is
taken explicitly at the previous level so the implicit system is monotone.

Testing the first equation with the constant pair shows that the
generalized mean of rho is conserved exactly: the stiffness rows sum to
zero and the convective fluxes telescope.  This is asserted after every
step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import FieldPair, StripGeometry, StripGrid
from .linops import NewtonError, SolverError, newton_damped
from .potentials import ObstacleMultiplier, QuenchParams, SmoothPotential, h_prime, h_second

RHO_GUARD = 1e-12  # Newton iterates stay this far inside (-1, 1)


@dataclass
class PhysParams:
    """Time horizon, relaxation constant and initial state.

    tau multiplies both the bulk and the surface time derivative in the
    potential equation (the two relaxation constants are taken equal).
    """

    tau: float
    t_final: float
    dt: float
    rho0: FieldPair

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("(A2): tau must be positive")
        if self.dt <= 0 or self.t_final <= 0:
            raise ValueError("dt and t_final must be positive")
        steps = self.t_final / self.dt
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError(f"t_final/dt = {steps} is not an integer step count")
        if self.rho0.min() <= -1.0 or self.rho0.max() >= 1.0:
            raise ValueError("(A1): initial state must satisfy -1 < rho0 < 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))


@dataclass
class SolverOptions:
    newton_tol: float = 1e-11
    newton_max_iter: int = 50
    newton_backtrack: float = 0.5
    pdas_max_sweeps: int = 50
    pdas_c: float = 1.0
    mass_tol: float = 1e-12


@dataclass
class StepDiagnostics:
    iterations: int
    residual: float
    min_rho: float
    max_rho: float
    mean: float


@dataclass
class StateSolution:
    """Trajectory of one forward solve.

    rho[k], mu[k] for k = 0..K (mu[0] is None: the scheme never defines
    it); multiplier[k] is the quench surrogate pair or the obstacle
    multiplier.  step_factors holds the LU factorization of each converged
    step system so the adjoint can run exact transpose solves; in obstacle
    mode active_masks[k] records the contact set (+1/-1/0 per node).
    """

    mode: str
    alpha: Optional[float]
    rho: List[FieldPair]
    mu: List[Optional[FieldPair]]
    multiplier: List
    r_hat: float
    diagnostics: List[StepDiagnostics]
    dt: float
    step_factors: Optional[list] = None
    active_masks: Optional[list] = None

    @property
    def n_steps(self) -> int:
        return len(self.rho) - 1

    def min_gap_to_bounds(self) -> float:
        """Smallest distance of the trajectory to the obstacle +-1."""
        return min(1.0 - max(abs(r.min()), abs(r.max())) for r in self.rho)

    def rho_vectors(self) -> np.ndarray:
        return np.stack([r.to_vector() for r in self.rho])


def initial_constant(geom: StripGeometry, value: float) -> FieldPair:
    return FieldPair.constant(value, geom)


def initial_stripe(
    geom: StripGeometry, amplitude: float = 0.6, n_waves: int = 1, width: float = 0.35
) -> FieldPair:
    """y-independent tanh-smoothed stripes in x, scaled into (-1, 1)."""
    if not (0.0 < amplitude < 1.0):
        raise ValueError("stripe amplitude must lie in (0, 1)")

    def profile(x, y):
        return amplitude * np.tanh(np.sin(2 * np.pi * n_waves * x / geom.Lx) / width)

    return FieldPair.from_function(profile, geom)


def pi_packed(grid: StripGrid, pot: SmoothPotential, rho: np.ndarray) -> np.ndarray:
    """pi(rho) on bulk nodes, pi_Gamma on traces, packed."""
    nb = grid.geom.n_bulk
    nx = grid.geom.Nx
    out = np.empty_like(rho)
    out[:nb] = pot.pi_eval(rho[:nb])[0]
    out[nb:] = pot.pi_gamma_eval(rho[nb:])[0]
    return out


def pi_prime_packed(grid: StripGrid, pot: SmoothPotential, rho: np.ndarray) -> np.ndarray:
    nb = grid.geom.n_bulk
    out = np.empty_like(rho)
    out[:nb] = pot.pi_eval(rho[:nb])[1]
    out[nb:] = pot.pi_gamma_eval(rho[nb:])[1]
    return out


@dataclass
class StepResult:
    rho: np.ndarray
    mu: np.ndarray
    diagnostics: StepDiagnostics
    factor: object  # splu of the converged step system
    active_mask: Optional[np.ndarray] = None
    xi: Optional[np.ndarray] = None


def step_quench(
    grid: StripGrid,
    pot: SmoothPotential,
    qp: QuenchParams,
    tau: float,
    dt: float,
    rho_prev: np.ndarray,
    mu_prev: Optional[np.ndarray],
    conv: Optional[sp.csr_matrix],
    opts: SolverOptions,
) -> StepResult:
    """One implicit step of the quench-regularized system via damped Newton."""
    n = grid.geom.n_total
    mdiag = grid.mass_diag
    M = grid.M
    K = grid.K
    phi = qp.phi
    pi_prev = pi_packed(grid, pot, rho_prev)
    inv_m = 1.0 / mdiag

    a11 = M.multiply(1.0 / dt)
    if conv is not None:
        a11 = a11 + conv
    a21_lin = M.multiply(tau / dt) + K

    def split(z):
        return z[:n], z[n:]

    def residual(z):
        rho, mu = split(z)
        r1 = mdiag * (rho - rho_prev) / dt + K @ mu
        if conv is not None:
            r1 += conv @ rho
        r2 = (
            tau * mdiag * (rho - rho_prev) / dt
            + K @ rho
            + mdiag * (phi * h_prime(rho) + pi_prev)
            - mdiag * mu
        )
        # sup norm over the strong (quadrature-normalized) equations
        return np.concatenate([r1 * inv_m, r2 * inv_m])

    def jacobian(z):
        rho, _ = split(z)
        a21 = a21_lin + sp.diags(mdiag * phi * h_second(rho))
        jac = sp.bmat([[a11, K], [a21, -M]], format="csr")
        return sp.diags(np.concatenate([inv_m, inv_m])) @ jac

    if mu_prev is not None:
        mu0 = mu_prev
    else:
        mu0 = inv_m * (K @ rho_prev) + phi * h_prime(rho_prev) + pi_prev
    z0 = np.concatenate([rho_prev, mu0])
    lower = np.concatenate([np.full(n, -1.0 + RHO_GUARD), np.full(n, -np.inf)])
    upper = np.concatenate([np.full(n, 1.0 - RHO_GUARD), np.full(n, np.inf)])
    try:
        z, info = newton_damped(
            residual,
            jacobian,
            z0,
            lower=lower,
            upper=upper,
            tol=opts.newton_tol,
            max_iter=opts.newton_max_iter,
            backtrack=opts.newton_backtrack,
        )
    except NewtonError as err:
        gap = 1.0 - np.max(np.abs(rho_prev))
        raise SolverError(
            f"quench Newton failed (alpha={qp.alpha:g}, dt={dt:g}, "
            f"gap to bounds {gap:.3e}): {err}"
        ) from err
    rho, mu = split(z)
    # exact transpose solves in the adjoint need the converged Jacobian
    a21 = a21_lin + sp.diags(mdiag * phi * h_second(rho))
    jac_weak = sp.bmat([[a11, K], [a21, -M]], format="csc")
    factor = spla.splu(jac_weak)
    diag = StepDiagnostics(
        iterations=info["iterations"],
        residual=info["residual"],
        min_rho=float(rho.min()),
        max_rho=float(rho.max()),
        mean=grid.generalized_mean(rho),
    )
    return StepResult(rho=rho, mu=mu, diagnostics=diag, factor=factor)


def step_obstacle(
    grid: StripGrid,
    pot: SmoothPotential,
    tau: float,
    dt: float,
    rho_prev: np.ndarray,
    conv: Optional[sp.csr_matrix],
    active_init: Optional[np.ndarray],
    opts: SolverOptions,
) -> StepResult:
    """One implicit step of the double-obstacle system via primal-dual
    active sets.

    Active nodes carry rho = +-1 and a free multiplier; the sets are
    updated from xi + c (rho -+ 1) until they repeat.  The explicit pi
    makes every sweep a linear solve, and the converged iterate satisfies
    the complementarity conditions exactly.
    """
    n = grid.geom.n_total
    mdiag = grid.mass_diag
    M = grid.M
    K = grid.K
    pi_prev = pi_packed(grid, pot, rho_prev)
    c = opts.pdas_c

    a11 = M.multiply(1.0 / dt)
    if conv is not None:
        a11 = a11 + conv
    top = sp.hstack([a11, K], format="csr")
    a21 = (M.multiply(tau / dt) + K).tocsr()
    a22 = (-M).tocsr()
    rhs_top = mdiag * rho_prev / dt
    rhs_row2 = tau * mdiag * rho_prev / dt - mdiag * pi_prev

    active = np.zeros(n, dtype=int) if active_init is None else active_init.copy()
    factor = None
    rho = mu = xi = None
    for sweep in range(1, opts.pdas_max_sweeps + 1):
        inactive_idx = np.flatnonzero(active == 0)
        active_idx = np.flatnonzero(active != 0)
        sel_i = sp.eye(n, format="csr")[inactive_idx]
        blocks = [top, sp.hstack([sel_i @ a21, sel_i @ a22])]
        rhs = [rhs_top, rhs_row2[inactive_idx]]
        if active_idx.size:
            sel_a = sp.eye(n, format="csr")[active_idx]
            blocks.append(sp.hstack([sel_a, sp.csr_matrix((active_idx.size, n))]))
            rhs.append(active[active_idx].astype(float))
        system = sp.vstack(blocks, format="csc")
        factor = spla.splu(system)
        sol = factor.solve(np.concatenate(rhs))
        rho, mu = sol[:n], sol[n:]
        # multiplier from the strong form of the potential equation
        xi = mu - tau * (rho - rho_prev) / dt - (K @ rho) / mdiag - pi_prev
        xi[inactive_idx] = 0.0
        if active_idx.size:
            rho[active_idx] = active[active_idx].astype(float)  # snap to +-1
        new_active = np.zeros(n, dtype=int)
        new_active[xi + c * (rho - 1.0) > 0.0] = 1
        new_active[xi + c * (rho + 1.0) < 0.0] = -1
        if np.array_equal(new_active, active):
            break
        active = new_active
    else:
        raise SolverError(
            f"active-set iteration did not settle in {opts.pdas_max_sweeps} sweeps"
        )

    res = float(np.max(np.abs(system @ sol - np.concatenate(rhs))))
    diag = StepDiagnostics(
        iterations=sweep,
        residual=res,
        min_rho=float(rho.min()),
        max_rho=float(rho.max()),
        mean=grid.generalized_mean(rho),
    )
    return StepResult(
        rho=rho, mu=mu, diagnostics=diag, factor=factor, active_mask=active, xi=xi
    )


def solve_forward(problem, u, mode: str, alpha: Optional[float] = None) -> StateSolution:
    """March the full trajectory; mode is "quench" (needs alpha) or
    "obstacle".  u may be None (no convection) or a Control.

    Raises SolverError with the failing step index on any breakdown, and
    asserts exact mass conservation after every step.
    """
    grid: StripGrid = problem.grid
    pot: SmoothPotential = problem.potential
    phys: PhysParams = problem.phys
    opts: SolverOptions = problem.solver
    if mode == "quench":
        if alpha is None:
            raise ValueError("quench mode needs alpha")
        qp = QuenchParams(alpha, problem.quench_p)
    elif mode == "obstacle":
        qp = None
    else:
        raise ValueError(f"unknown mode {mode!r}")

    dt = phys.dt
    n_steps = phys.n_steps
    rho_prev = phys.rho0.to_vector()
    r_hat = grid.generalized_mean(rho_prev)

    sol = StateSolution(
        mode=mode,
        alpha=alpha,
        rho=[phys.rho0.copy()],
        mu=[None],
        multiplier=[None],
        r_hat=r_hat,
        diagnostics=[],
        dt=dt,
        step_factors=[None],
        active_masks=[None] if mode == "obstacle" else None,
    )

    mu_prev = None
    active = None
    mean_prev = r_hat
    for k in range(1, n_steps + 1):
        conv = None
        if u is not None:
            ux, uy = u.edge_fields(k - 1)
            conv = grid.convection_matrix(ux, uy)
        try:
            if mode == "quench":
                step = step_quench(grid, pot, qp, phys.tau, dt, rho_prev, mu_prev, conv, opts)
            else:
                step = step_obstacle(grid, pot, phys.tau, dt, rho_prev, conv, active, opts)
        except SolverError as err:
            raise SolverError(f"forward solve failed at step {k}/{n_steps}: {err}") from err

        drift = abs(step.diagnostics.mean - mean_prev)
        if drift > opts.mass_tol * max(1.0, abs(r_hat)):
            raise SolverError(
                f"mass conservation violated at step {k}: drift {drift:.3e}"
            )
        mean_prev = step.diagnostics.mean

        geom = grid.geom
        sol.rho.append(FieldPair.from_vector(step.rho, geom))
        sol.mu.append(FieldPair.from_vector(step.mu, geom))
        if mode == "quench":
            surrogate = qp.phi * h_prime(step.rho)
            sol.multiplier.append(FieldPair.from_vector(surrogate, geom))
        else:
            nb, nx = geom.n_bulk, geom.Nx
            sol.multiplier.append(
                ObstacleMultiplier(
                    xi_bulk=step.xi[:nb].reshape(geom.Ny, nx),
                    xi_bottom=step.xi[nb : nb + nx],
                    xi_top=step.xi[nb + nx :],
                    active_bulk=step.active_mask[:nb].reshape(geom.Ny, nx),
                    active_bottom=step.active_mask[nb : nb + nx],
                    active_top=step.active_mask[nb + nx :],
                )
            )
            sol.active_masks.append(step.active_mask)
            active = step.active_mask
        sol.diagnostics.append(step.diagnostics)
        sol.step_factors.append(step.factor)
        rho_prev = step.rho
        mu_prev = step.mu
    return sol


def l2q_distance(grid: StripGrid, sol_a: StateSolution, sol_b: StateSolution) -> float:
    """Space-time L2 distance of two rho trajectories on the same grid
    (right-endpoint rule in time, bulk and surface quadrature in space)."""
    if sol_a.n_steps != sol_b.n_steps or sol_a.dt != sol_b.dt:
        raise ValueError("trajectories are not comparable")
    acc = 0.0
    for k in range(1, sol_a.n_steps + 1):
        d = sol_a.rho[k].to_vector() - sol_b.rho[k].to_vector()
        acc += sol_a.dt * float(d @ (grid.mass_diag * d))
    return float(np.sqrt(acc))
