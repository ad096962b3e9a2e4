"""Admissible velocity controls, reduced cost, gradients, and the
projected-gradient / deep-quench machinery.

Two control parameterizations are offered.  The default shear family
u = (f(y, t), 0) is divergence free with zero normal trace by
construction, and projection onto the admissible set (pointwise bound
plus norm cap) is exact: clip, then rescale.  The streamfunction family
u = (d psi/dy, -d psi/dx) covers richer flows; its projection alternates
pointwise clipping of the edge speeds with a least-squares curl refit and
is explicitly approximate.

The admissible set combines a pointwise speed bound u_bar with a cap r0
on the norm of the space L^2(0,T; div-free) intersect L^inf intersect
H^1(0,T; L^3): the discrete norm takes the max of the three parts.
"""

from __future__ import annotations

from collections import namedtuple
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np
import scipy.sparse as sp

from .adjoint import AdjointSolution, solve_adjoint
from .cost import CostSpec, evaluate_cost  # noqa: F401  (CostSpec is part of this module's surface)
from .grid import StripGrid
from .linops import SolverError, solve_spd
from .state import StateSolution, l2q_distance, solve_forward

XNorm = namedtuple("XNorm", ["l2", "linf", "h1l3", "combined"])


class ControlError(RuntimeError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


@dataclass
class Control:
    """Admissible velocity field on the time slabs of one forward solve.

    mode "shear": values has shape (K, Ny), row j giving the x-velocity of
    bulk row j during slab k.  mode "streamfunction": values has shape
    (K, Ny+1, Nx) holding psi at the cell corners; both wall rows must be
    constant so the normal trace vanishes.
    """

    mode: str
    values: np.ndarray
    u_bar: object
    r0: float
    grid: StripGrid
    dt: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        g = self.grid.geom
        if self.mode == "shear":
            if self.values.ndim != 2 or self.values.shape[1] != g.Ny:
                raise ValueError(f"shear values must be (K, {g.Ny})")
        elif self.mode == "streamfunction":
            if self.values.ndim != 3 or self.values.shape[1:] != (g.Ny + 1, g.Nx):
                raise ValueError(f"streamfunction values must be (K, {g.Ny + 1}, {g.Nx})")
            for k in range(self.values.shape[0]):
                for row in (0, -1):
                    if np.ptp(self.values[k, row, :]) > 1e-12:
                        raise ValueError("wall rows of psi must be constant (u.n = 0)")
        else:
            raise ValueError(f"unknown control mode {self.mode!r}")
        if self.r0 <= 0:
            raise ValueError("(A5): r0 must be positive")

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    # ---------------- linear structure ----------------

    def copy(self) -> "Control":
        return replace(self, values=self.values.copy())

    def zeros_like(self) -> "Control":
        return replace(self, values=np.zeros_like(self.values))

    def plus_scaled(self, other: "Control", s: float) -> "Control":
        self._check_compatible(other)
        return replace(self, values=self.values + s * other.values)

    def minus(self, other: "Control") -> "Control":
        return self.plus_scaled(other, -1.0)

    def _check_compatible(self, other):
        if self.mode != other.mode or self.values.shape != other.values.shape:
            raise ValueError("control parameterizations do not match")

    # ---------------- velocity realization ----------------

    def edge_fields(self, k: int):
        """(ux, uy) on the staggered edges during slab k; divergence free
        and tangential at the walls by construction."""
        g = self.grid.geom
        if self.mode == "shear":
            ux = np.repeat(self.values[k][:, None], g.Nx, axis=1)
            uy = np.zeros((g.Ny - 1, g.Nx))
        else:
            psi = self.values[k]
            ux = (psi[1:, :] - psi[:-1, :]) / g.hy
            uy = -(psi[1:-1, :] - np.roll(psi[1:-1, :], 1, axis=1)) / g.hx
        return ux, uy

    # ---------------- norms ----------------

    def _slab_weights(self):
        g = self.grid.geom
        if self.mode == "shear":
            return g.Lx * g.hy  # measure of one bulk row
        return g.hx * g.hy  # per-edge quadrature

    def l2q_inner(self, other: "Control") -> float:
        """L^2(Q) inner product of the velocity fields."""
        self._check_compatible(other)
        g = self.grid.geom
        if self.mode == "shear":
            return float(self.dt * g.Lx * g.hy * np.sum(self.values * other.values))
        total = 0.0
        for k in range(self.n_steps):
            ux, uy = self.edge_fields(k)
            vx, vy = other.edge_fields(k)
            total += g.hx * g.hy * (np.sum(ux * vx) + np.sum(uy * vy))
        return float(self.dt * total)

    def l2q_norm(self) -> float:
        return float(np.sqrt(max(self.l2q_inner(self), 0.0)))

    def linf_norm(self) -> float:
        if self.mode == "shear":
            return float(np.max(np.abs(self.values))) if self.values.size else 0.0
        worst = 0.0
        for k in range(self.n_steps):
            ux, uy = self.edge_fields(k)
            worst = max(worst, float(np.max(np.abs(ux))), float(np.max(np.abs(uy))))
        return worst

    def _l3_at(self, k: int) -> float:
        g = self.grid.geom
        if self.mode == "shear":
            return float((g.Lx * g.hy * np.sum(np.abs(self.values[k]) ** 3)) ** (1.0 / 3.0))
        ux, uy = self.edge_fields(k)
        s = g.hx * g.hy * (np.sum(np.abs(ux) ** 3) + np.sum(np.abs(uy) ** 3))
        return float(s ** (1.0 / 3.0))

    def x_norm(self) -> XNorm:
        """Discrete norms of L^2(Q), L^inf(Q) and H^1(0,T; L^3); the
        combined control-space norm is their max.

        The time derivative uses forward difference quotients between
        consecutive slabs; the control is slab-constant, so the first slab
        contributes no quotient (its value IS the value at t = 0).
        """
        l2 = self.l2q_norm()
        linf = self.linf_norm()
        l3_sq = sum(self.dt * self._l3_at(k) ** 2 for k in range(self.n_steps))
        quot_sq = 0.0
        if self.n_steps > 1:
            diffs = replace(self, values=np.diff(self.values, axis=0) / self.dt)
            quot_sq = sum(self.dt * diffs._l3_at(k) ** 2 for k in range(diffs.n_steps))
        h1l3 = float(np.sqrt(l3_sq + quot_sq))
        return XNorm(l2=l2, linf=linf, h1l3=h1l3, combined=max(l2, linf, h1l3))


def x_norm(u: Control) -> XNorm:
    return u.x_norm()


@dataclass
class ProjectionResult:
    control: Control
    exact: bool
    box_clipped: bool
    rescaled: bool


def _curl_matrix(grid: StripGrid):
    """Sparse map from gauge-reduced psi dofs to stacked (ux, uy) edges.

    dofs: [bottom wall scalar, interior corner rows (Ny-1) x Nx, top wall
    scalar]; the global constant gauge is removed by pinning the bottom
    scalar when solving least squares.
    """
    g = grid.geom
    nx, ny = g.Nx, g.Ny
    n_psi = (ny - 1) * nx + 2

    def psi_index(m, i):
        if m == 0:
            return 0
        if m == ny:
            return n_psi - 1
        return 1 + (m - 1) * nx + i

    rows, cols, vals = [], [], []
    # ux edges: (ny, nx); edge (j, i) = (psi[j+1, i] - psi[j, i])/hy
    for j in range(ny):
        for i in range(nx):
            e = j * nx + i
            rows += [e, e]
            cols += [psi_index(j + 1, i), psi_index(j, i)]
            vals += [1.0 / g.hy, -1.0 / g.hy]
    # uy edges: (ny-1, nx); edge (j, i) = -(psi[j+1, i] - psi[j+1, i-1])/hx
    base = ny * nx
    for j in range(ny - 1):
        for i in range(nx):
            e = base + j * nx + i
            rows += [e, e]
            cols += [psi_index(j + 1, i), psi_index(j + 1, (i - 1) % nx)]
            vals += [-1.0 / g.hx, 1.0 / g.hx]
    n_edges = ny * nx + (ny - 1) * nx
    return sp.coo_matrix((vals, (rows, cols)), shape=(n_edges, n_psi)).tocsr()


def _psi_from_dofs(dofs, grid):
    g = grid.geom
    psi = np.empty((g.Ny + 1, g.Nx))
    psi[0, :] = dofs[0]
    psi[1:-1, :] = dofs[1:-1].reshape(g.Ny - 1, g.Nx)
    psi[-1, :] = dofs[-1]
    return psi


def _psi_to_dofs(psi):
    return np.concatenate([[psi[0, 0]], psi[1:-1, :].ravel(), [psi[-1, 0]]])


def project_Uad(u: Control, passes: int = 3) -> ProjectionResult:
    """Project onto the admissible set.

    Shear mode is exact: clip the profile pointwise to [-u_bar, u_bar],
    then rescale once if the combined norm exceeds r0 (scaling keeps the
    box).  Streamfunction mode alternates pointwise clipping of the edge
    speeds with a least-squares streamfunction refit, then applies a final
    uniform rescale that restores strict feasibility; the result is marked
    approximate.
    """
    if u.mode == "shear":
        bound = np.broadcast_to(np.asarray(u.u_bar, dtype=float), u.values.shape)
        clipped = np.clip(u.values, -bound, bound)
        box_clipped = not np.array_equal(clipped, u.values)
        out = replace(u, values=clipped)
        xn = out.x_norm().combined
        rescaled = xn > u.r0
        if rescaled:
            out = replace(out, values=out.values * (u.r0 / xn))
        return ProjectionResult(out, exact=True, box_clipped=box_clipped, rescaled=rescaled)

    # streamfunction: clip / refit passes, then uniform feasibility rescale
    g = u.grid.geom
    curl = _curl_matrix(u.grid)
    normal = (curl.T @ curl).tocsc()
    # pin the bottom-wall dof to remove the constant gauge
    n_psi = normal.shape[0]
    keep = np.arange(1, n_psi)
    normal_red = normal[keep][:, keep]
    ubar = float(np.max(np.asarray(u.u_bar)))
    values = u.values.copy()
    touched = False
    for k in range(u.n_steps):
        dofs = _psi_to_dofs(values[k])
        for _ in range(passes):
            edges = curl @ dofs
            clipped = np.clip(edges, -ubar, ubar)
            if np.array_equal(clipped, edges):
                break
            touched = True
            rhs = curl.T @ clipped
            rhs_red = rhs[keep] - normal[keep, 0].toarray().ravel() * dofs[0]
            sol = solve_spd(normal_red, rhs_red, tol=1e-10)
            dofs = np.concatenate([[dofs[0]], sol])
        values[k] = _psi_from_dofs(dofs, u.grid)
    out = replace(u, values=values)
    xn = out.x_norm()
    scale = min(1.0, ubar / max(xn.linf, 1e-300), u.r0 / max(xn.combined, 1e-300))
    rescaled = scale < 1.0
    if rescaled:
        # scale the deviation from the global mean: the induced velocity
        # scales by exactly `scale`, and wall rows stay constant
        mean = values.mean()
        out = replace(out, values=mean + scale * (values - mean))
    return ProjectionResult(out, exact=False, box_clipped=touched, rescaled=rescaled)


def check_admissible(u: Control, tol: float = 1e-10) -> bool:
    xn = u.x_norm()
    if u.mode == "shear":
        bound = np.broadcast_to(np.asarray(u.u_bar, dtype=float), u.values.shape)
        if np.any(np.abs(u.values) > bound * (1 + tol) + tol):
            return False
    else:
        if xn.linf > float(np.max(np.asarray(u.u_bar))) * (1 + tol) + tol:
            return False
    return xn.combined <= u.r0 * (1 + tol) + tol


@dataclass
class ControlGradient:
    """Full-field gradient on the velocity edges plus its reduction to the
    control parameterization.

    field_x/field_y hold the physical integrand rho grad(p) + b5 u
    (+ (u - anchor) for the adapted cost) per slab; reduced is dJ/dvalues
    by the exact discrete chain rule; riesz is the representative of the
    reduced gradient in the control L^2(Q) metric, the direction the
    projected-gradient method steps along.
    """

    field_x: np.ndarray
    field_y: np.ndarray
    reduced: np.ndarray
    riesz: Control


def assemble_gradient(
    problem, state: StateSolution, adj: AdjointSolution, u: Control, anchor: Optional[Control] = None
) -> ControlGradient:
    grid: StripGrid = problem.grid
    g = grid.geom
    b5 = problem.cost.beta[4]
    dt = state.dt
    K = state.n_steps
    field_x = np.zeros((K, g.Ny, g.Nx))
    field_y = np.zeros((K, g.Ny - 1, g.Nx))
    for k in range(1, K + 1):
        rho_b = state.rho[k].bulk
        p_b = adj.p[k].bulk
        gx, gy = grid.rho_grad_edges(rho_b, p_b)
        field_x[k - 1] = gx / (g.hx * g.hy)
        field_y[k - 1] = gy / (g.hx * g.hy)
        ux, uy = u.edge_fields(k - 1)
        field_x[k - 1] += b5 * ux
        field_y[k - 1] += b5 * uy
        if anchor is not None:
            ax, ay = anchor.edge_fields(k - 1)
            field_x[k - 1] += ux - ax
            field_y[k - 1] += uy - ay

    w = g.hx * g.hy
    if u.mode == "shear":
        reduced = dt * w * field_x.sum(axis=2)  # (K, Ny): sum over the row's edges
        riesz_vals = reduced / (dt * g.Lx * g.hy)
    else:
        curl = _curl_matrix(grid)
        reduced = np.zeros_like(u.values)
        riesz_vals = np.zeros_like(u.values)
        normal = (curl.T @ curl).tocsc()
        keep = np.arange(1, normal.shape[0])
        normal_red = normal[keep][:, keep]
        for k in range(K):
            edge_grad = dt * w * np.concatenate([field_x[k].ravel(), field_y[k].ravel()])
            red = curl.T @ edge_grad
            reduced[k] = _psi_from_dofs(red, grid)
            # wall rows replicate one scalar dof: split its derivative so
            # that grid-shaped pairings reproduce the dof pairing exactly
            reduced[k][0, :] /= g.Nx
            reduced[k][-1, :] /= g.Nx
            # Riesz representative in the velocity L^2 metric:
            # (dt * w) Curl^T Curl r = reduced, gauge-pinned
            rr = solve_spd(normal_red, red[keep] / (dt * w), tol=1e-10)
            riesz_vals[k] = _psi_from_dofs(np.concatenate([[0.0], rr]), grid)
    riesz = replace(u, values=riesz_vals)
    return ControlGradient(field_x=field_x, field_y=field_y, reduced=reduced, riesz=riesz)


@dataclass
class OptimizeOptions:
    max_iter: int = 100
    tol: float = 1e-8
    armijo_sigma: float = 1e-4
    armijo_shrink: float = 0.5
    max_backtracks: int = 30
    initial_step: float = 1.0
    # warm-start the line search: double the trial step after a clean
    # accept, resume from the last working step otherwise (a fixed unit
    # step stalls when the reduced curvature is far from unity)
    adaptive_step: bool = True
    max_step: float = 1e6


@dataclass
class OptimizeHistory:
    cost: List[float] = field(default_factory=list)
    step_len: List[float] = field(default_factory=list)
    stationarity: List[float] = field(default_factory=list)
    x_norm_parts: List[XNorm] = field(default_factory=list)
    status: str = "running"
    final_state: Optional[StateSolution] = None
    final_gradient: Optional[ControlGradient] = None

    def rows(self):
        for i, c in enumerate(self.cost):
            xn = self.x_norm_parts[i]
            yield (i, c, self.step_len[i], self.stationarity[i], xn.l2, xn.linf, xn.h1l3)


def optimize(
    problem,
    alpha: float,
    u0: Control,
    opts: Optional[OptimizeOptions] = None,
    anchor: Optional[Control] = None,
):
    """Projected gradient with Armijo backtracking on the reduced cost.

    Accepted iterates never increase the cost; termination on the
    projected-stationarity measure ||u - P(u - g)||_{L^2(Q)} <= tol or on
    the iteration cap.  Returns (control, history).
    """
    opts = opts or OptimizeOptions()
    grid: StripGrid = problem.grid
    u = project_Uad(u0).control
    hist = OptimizeHistory()

    state = solve_forward(problem, u, "quench", alpha=alpha)
    j_val = evaluate_cost(grid, state, problem.cost, u, anchor)
    step_init = opts.initial_step
    for it in range(opts.max_iter):
        adj = solve_adjoint(problem, state, u)
        grad = assemble_gradient(problem, state, adj, u, anchor)
        trial_full = project_Uad(u.plus_scaled(grad.riesz, -1.0)).control
        stationarity = trial_full.minus(u).l2q_norm()
        hist.cost.append(j_val)
        hist.stationarity.append(stationarity)
        hist.x_norm_parts.append(u.x_norm())
        if stationarity <= opts.tol:
            hist.step_len.append(0.0)
            hist.status = "stationary"
            hist.final_state = state
            hist.final_gradient = grad
            return u, hist

        step = step_init
        accepted = False
        for bt in range(opts.max_backtracks):
            u_trial = project_Uad(u.plus_scaled(grad.riesz, -step)).control
            diff = u_trial.minus(u)
            try:
                state_trial = solve_forward(problem, u_trial, "quench", alpha=alpha)
            except SolverError as err:
                hist.status = "forward_failure"
                raise ControlError(f"line search forward solve failed: {err}", hist) from err
            j_trial = evaluate_cost(grid, state_trial, problem.cost, u_trial, anchor)
            slope = grad.riesz.l2q_inner(diff)
            if j_trial <= j_val + opts.armijo_sigma * slope:
                hist.step_len.append(step)
                u, state, j_val = u_trial, state_trial, j_trial
                accepted = True
                if opts.adaptive_step:
                    grew = bt == 0
                    step_init = min(step * 2.0 if grew else step, opts.max_step)
                break
            step *= opts.armijo_shrink
        if not accepted:
            hist.step_len.append(0.0)
            hist.status = "line_search_stalled"
            hist.final_state = state
            hist.final_gradient = grad
            return u, hist

    hist.status = "max_iter"
    hist.final_state = state
    adj = solve_adjoint(problem, state, u)
    hist.final_gradient = assemble_gradient(problem, state, adj, u, anchor)
    return u, hist


def vi_box_residual(u: Control, grad: ControlGradient, skip_infeasible: bool = True):
    """Sampled first-order optimality check for shear controls.

    For every dof the probe control moves that dof to one of its box
    extremes; the variational inequality demands <g, v - u> >= 0.  Returns
    the minimum pairing over feasible probes.
    """
    if u.mode != "shear":
        raise ValueError("box probes are defined for the shear parameterization")
    g = u.grid.geom
    w = u.dt * g.Lx * g.hy
    bound = np.broadcast_to(np.asarray(u.u_bar, dtype=float), u.values.shape)
    candidates = []
    for sign in (+1.0, -1.0):
        pairing = w * grad.riesz.values * (sign * bound - u.values)
        for flat in range(pairing.size):
            k, j = np.unravel_index(flat, pairing.shape)
            candidates.append((float(pairing[k, j]), sign, k, j))
    candidates.sort()
    if not skip_infeasible:
        return candidates[0][0], 0
    skipped = 0
    for val, sign, k, j in candidates:
        probe = u.values.copy()
        probe[k, j] = sign * bound[k, j]
        if check_admissible(replace(u, values=probe)):
            return val, skipped
        skipped += 1
    return np.inf, skipped


def fd_gradient_check(
    problem,
    alpha: float,
    u: Control,
    directions: List[Control],
    anchor: Optional[Control] = None,
    steps=(1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7),
):
    """Compare the adjoint-assembled directional derivative against central
    finite differences of the reduced cost.

    The FD step is optimized over `steps` per direction (truncation versus
    cancellation-noise trade-off; directions with small directional
    derivatives need the larger steps).  Returns one record per direction
    with the adjoint value, the best-matching FD value and the relative
    error.
    """
    grid: StripGrid = problem.grid
    state = solve_forward(problem, u, "quench", alpha=alpha)
    adj = solve_adjoint(problem, state, u)
    grad = assemble_gradient(problem, state, adj, u, anchor)

    def reduced_cost(ctrl):
        st = solve_forward(problem, ctrl, "quench", alpha=alpha)
        return evaluate_cost(grid, st, problem.cost, ctrl, anchor)

    records = []
    for du in directions:
        adj_val = float(np.sum(grad.reduced * du.values))
        best = None
        for h in steps:
            jp = reduced_cost(u.plus_scaled(du, +h))
            jm = reduced_cost(u.plus_scaled(du, -h))
            fd = (jp - jm) / (2.0 * h)
            rel = abs(adj_val - fd) / max(abs(fd), 1e-300)
            if best is None or rel < best["rel_err"]:
                best = {"adjoint": adj_val, "fd": fd, "rel_err": rel, "step": h}
        records.append(best)
    return records


@dataclass
class QuenchLevelReport:
    alpha: float
    final_cost: float
    vi_residual: float
    dist_to_obstacle_state: float
    control_increment: Optional[float]
    probe_cost_gap: Optional[float]
    optimizer_status: str
    iterations: int


@dataclass
class QuenchSweepReport:
    levels: List[QuenchLevelReport]
    increments_decreasing: bool
    dists_decreasing: bool
    probe_gaps_decreasing: Optional[bool]
    controls: List[Control] = field(default_factory=list)


def deep_quench_drive(
    problem,
    u0: Control,
    schedule: List[float],
    anchored: bool = False,
    probe: Optional[Control] = None,
    reference_anchor: Optional[Control] = None,
    opts: Optional[OptimizeOptions] = None,
) -> QuenchSweepReport:
    """Continuation over a decreasing quench schedule.

    Each level is optimized warm-started from the previous optimizer.  The
    anchored variant minimizes the adapted cost around one FIXED reference
    control for every level; when none is supplied, the driver first
    computes a surrogate for the limit-problem optimizer by solving the
    smallest scheduled level plain (a moving anchor makes the level
    increments track the anchor chain instead of the continuation and
    destroys their decay).  Per level the driver records the distance of
    the optimal quench state to the obstacle state under the same control,
    the control increments along the schedule, and the cost gap at a fixed
    probe control against the obstacle solver.  Level failures are
    recorded and the drive continues.
    """
    if any(a2 >= a1 for a1, a2 in zip(schedule, schedule[1:])) or not schedule:
        raise ValueError("schedule must be strictly decreasing")
    grid: StripGrid = problem.grid
    probe_obstacle_cost = None
    if probe is not None:
        st0 = solve_forward(problem, probe, "obstacle")
        probe_obstacle_cost = evaluate_cost(grid, st0, problem.cost, probe)

    if anchored and reference_anchor is None:
        reference_anchor, _ = optimize(problem, schedule[-1], u0, opts)

    levels: List[QuenchLevelReport] = []
    controls: List[Control] = []
    u_prev = u0
    for n, alpha in enumerate(schedule):
        anchor = reference_anchor if anchored else None
        try:
            u_star, hist = optimize(problem, alpha, u_prev, opts, anchor=anchor)
            state = hist.final_state
            cost_val = evaluate_cost(grid, state, problem.cost, u_star)
            vi_res, _ = vi_box_residual(u_star, hist.final_gradient)
            obs = solve_forward(problem, u_star, "obstacle")
            dist = l2q_distance(grid, state, obs)
            gap = None
            if probe is not None:
                st_a = solve_forward(problem, probe, "quench", alpha=alpha)
                gap = abs(
                    evaluate_cost(grid, st_a, problem.cost, probe) - probe_obstacle_cost
                )
            inc = None if n == 0 else u_star.minus(controls[-1]).l2q_norm()
            levels.append(
                QuenchLevelReport(
                    alpha=alpha,
                    final_cost=cost_val,
                    vi_residual=vi_res,
                    dist_to_obstacle_state=dist,
                    control_increment=inc,
                    probe_cost_gap=gap,
                    optimizer_status=hist.status,
                    iterations=len(hist.cost),
                )
            )
            controls.append(u_star)
            u_prev = u_star
        except (SolverError, ControlError) as err:
            levels.append(
                QuenchLevelReport(
                    alpha=alpha,
                    final_cost=float("nan"),
                    vi_residual=float("nan"),
                    dist_to_obstacle_state=float("nan"),
                    control_increment=None,
                    probe_cost_gap=None,
                    optimizer_status=f"failed: {err}",
                    iterations=0,
                )
            )

    incs = [l.control_increment for l in levels if l.control_increment is not None]
    dists = [l.dist_to_obstacle_state for l in levels if np.isfinite(l.dist_to_obstacle_state)]
    gaps = [l.probe_cost_gap for l in levels if l.probe_cost_gap is not None]
    return QuenchSweepReport(
        levels=levels,
        increments_decreasing=all(a >= b for a, b in zip(incs, incs[1:])) if incs else False,
        dists_decreasing=all(a > b for a, b in zip(dists, dists[1:])) if dists else False,
        probe_gaps_decreasing=(
            all(a > b for a, b in zip(gaps, gaps[1:])) if gaps else None
        ),
        controls=controls,
    )
