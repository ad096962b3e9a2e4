"""Tracking-type cost functional and its misfit terms.

J = b1/2 |rho - target_Q|^2_{Q} + b2/2 |rho_G - target_Sigma|^2_{Sigma}
  + b3/2 |rho(T) - target_Omega|^2_{Omega} + b4/2 |rho_G(T) - target_Gamma|^2_{Gamma}
  + b5/2 |u|^2_{Q}

with right-endpoint rectangle quadrature in time (matching the implicit
stepping) and the grid quadrature in space.  An optional anchor control
adds 1/2 |u - anchor|^2_{Q}; minimizing the anchored functional localizes
the continuation around the anchor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import FieldPair, StripGrid


def _target_level(target, k, geom, boundary=False):
    """Normalize scalar / field / per-level-sequence targets to a packed
    array slice for time level k."""
    if np.isscalar(target):
        return float(target)
    if isinstance(target, FieldPair):
        return target
    arr = np.asarray(target, dtype=float)
    if boundary:
        if arr.shape == (2, geom.Nx):
            return arr
        if arr.ndim == 3 and arr.shape[1:] == (2, geom.Nx):
            return arr[k]
    else:
        if arr.shape == (geom.Ny, geom.Nx):
            return arr
        if arr.ndim == 3 and arr.shape[1:] == (geom.Ny, geom.Nx):
            return arr[k]
    raise ValueError(f"target shape {arr.shape} does not match the grid")


@dataclass
class CostSpec:
    """Weights and targets of the tracking functional.

    beta = (b1..b5) must be nonnegative and not all zero.  Targets may be
    scalars, single fields (constant in time), or per-level sequences
    indexed 0..K.
    """

    beta: np.ndarray
    target_q: object = 0.0  # bulk, space-time
    target_sigma: object = 0.0  # boundary, space-time
    target_omega: object = 0.0  # bulk, final time
    target_gamma: object = 0.0  # boundary, final time

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        if self.beta.shape != (5,):
            raise ValueError("beta must have five entries")
        if np.any(self.beta < 0) or not np.any(self.beta > 0):
            raise ValueError("(A4): weights must be nonnegative and not all zero")

    def bulk_target_at(self, k, geom) -> np.ndarray:
        t = _target_level(self.target_q, k, geom)
        if isinstance(t, FieldPair):
            return t.bulk
        return np.broadcast_to(t, (geom.Ny, geom.Nx))

    def boundary_target_at(self, k, geom) -> np.ndarray:
        t = _target_level(self.target_sigma, k, geom, boundary=True)
        if isinstance(t, FieldPair):
            return np.stack([t.bottom, t.top])
        return np.broadcast_to(t, (2, geom.Nx))

    def terminal_bulk_target(self, geom) -> np.ndarray:
        t = _target_level(self.target_omega, 0, geom)
        if isinstance(t, FieldPair):
            return t.bulk
        return np.broadcast_to(t, (geom.Ny, geom.Nx))

    def terminal_boundary_target(self, geom) -> np.ndarray:
        t = _target_level(self.target_gamma, 0, geom, boundary=True)
        if isinstance(t, FieldPair):
            return np.stack([t.bottom, t.top])
        return np.broadcast_to(t, (2, geom.Nx))


def running_misfit(grid: StripGrid, cost: CostSpec, rho: FieldPair, k: int) -> np.ndarray:
    """Packed pointwise misfit [b1 (rho - target_Q); b2 (rho_G - target_Sigma)]."""
    geom = grid.geom
    b1, b2 = cost.beta[0], cost.beta[1]
    bulk = b1 * (rho.bulk - cost.bulk_target_at(k, geom))
    bdry = cost.boundary_target_at(k, geom)
    bottom = b2 * (rho.bottom - bdry[0])
    top = b2 * (rho.top - bdry[1])
    return np.concatenate([bulk.ravel(), bottom, top])


def terminal_misfit(grid: StripGrid, cost: CostSpec, rho_final: FieldPair) -> np.ndarray:
    """Packed pointwise misfit [b3 (rho(T) - target_Omega); b4 (...)]."""
    geom = grid.geom
    b3, b4 = cost.beta[2], cost.beta[3]
    bulk = b3 * (rho_final.bulk - cost.terminal_bulk_target(geom))
    bdry = cost.terminal_boundary_target(geom)
    bottom = b4 * (rho_final.bottom - bdry[0])
    top = b4 * (rho_final.top - bdry[1])
    return np.concatenate([bulk.ravel(), bottom, top])


def evaluate_cost(grid: StripGrid, state, cost: CostSpec, u=None, anchor=None) -> float:
    """Discrete tracking cost of a forward trajectory; adding an anchor
    control evaluates the adapted functional."""
    geom = grid.geom
    wa = geom.hx * geom.hy
    wb = geom.hx
    dt = state.dt
    b1, b2, b3, b4, b5 = cost.beta
    total = 0.0
    for k in range(1, state.n_steps + 1):
        rho = state.rho[k]
        if b1 > 0:
            d = rho.bulk - cost.bulk_target_at(k, geom)
            total += 0.5 * b1 * dt * wa * float(np.sum(d * d))
        if b2 > 0:
            t = cost.boundary_target_at(k, geom)
            db = rho.bottom - t[0]
            dtp = rho.top - t[1]
            total += 0.5 * b2 * dt * wb * float(np.sum(db * db) + np.sum(dtp * dtp))
    rho_T = state.rho[-1]
    if b3 > 0:
        d = rho_T.bulk - cost.terminal_bulk_target(geom)
        total += 0.5 * b3 * wa * float(np.sum(d * d))
    if b4 > 0:
        t = cost.terminal_boundary_target(geom)
        db = rho_T.bottom - t[0]
        dtp = rho_T.top - t[1]
        total += 0.5 * b4 * wb * float(np.sum(db * db) + np.sum(dtp * dtp))
    if u is not None and b5 > 0:
        total += 0.5 * b5 * u.l2q_inner(u)
    if anchor is not None:
        if u is None:
            raise ValueError("anchored cost needs the control")
        diff = u.minus(anchor)
        total += 0.5 * diff.l2q_inner(diff)
    return total
