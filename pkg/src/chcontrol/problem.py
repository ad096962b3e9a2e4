"""Problem container shared by the forward, adjoint and control layers.

A ProblemSpec bundles the validated pieces of one experiment: grid,
physics, smooth potential, cost, quench schedule, control bounds and
solver options.  Construction goes through `build`, which collects every
violated modeling assumption by name instead of stopping at the first.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .control import OptimizeOptions
from .cost import CostSpec
from .grid import FieldPair, StripGeometry, StripGrid
from .potentials import SmoothPotential
from .state import PhysParams, SolverOptions


class ValidationError(ValueError):
    """Carries the full list of violated assumptions."""

    def __init__(self, violations: List[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


@dataclass
class ProblemSpec:
    grid: StripGrid
    phys: PhysParams
    potential: SmoothPotential
    cost: CostSpec
    quench_alpha0: float = 0.1
    quench_ratio: float = 0.5
    quench_levels: int = 14
    quench_p: float = 1.0
    u_bar: float = 1.0
    r0: float = 10.0
    solver: SolverOptions = field(default_factory=SolverOptions)
    opt: OptimizeOptions = field(default_factory=OptimizeOptions)
    output_dir: str = "out"

    @property
    def geom(self) -> StripGeometry:
        return self.grid.geom

    def quench_schedule(self) -> List[float]:
        return [self.quench_alpha0 * self.quench_ratio**n for n in range(self.quench_levels)]


def build(
    geom: StripGeometry,
    rho0: FieldPair,
    tau: float,
    t_final: float,
    dt: float,
    cost: CostSpec,
    potential: Optional[SmoothPotential] = None,
    tau_gamma: Optional[float] = None,
    **kwargs,
) -> ProblemSpec:
    """Validate and assemble a ProblemSpec.

    Raises ValidationError listing every violated assumption: (A1) initial
    data strictly inside (-1, 1) with matching shapes, (A2) positive
    relaxation constants, (A3) evaluable smooth potentials, (A4) cost
    weights nonnegative and not all zero, (A5) nonempty admissible set,
    (A6) equal bulk and surface relaxation constants.
    """
    violations: List[str] = []
    grid = StripGrid(geom)
    potential = potential or SmoothPotential()

    if rho0.bulk.shape != (geom.Ny, geom.Nx):
        violations.append("(A1): initial state shape does not match the grid")
    elif rho0.min() <= -1.0 or rho0.max() >= 1.0:
        violations.append("(A1): initial state must satisfy -1 < rho0 < 1 everywhere")
    if tau <= 0:
        violations.append("(A2): tau must be positive")
    if tau_gamma is not None and tau_gamma != tau:
        violations.append("(A6): bulk and surface relaxation constants must coincide")
    try:
        potential.pi_eval(np.array([0.0]))
        potential.pi_gamma_eval(np.array([0.0]))
    except Exception:
        violations.append("(A3): smooth potentials must be evaluable on [-1, 1]")
    beta = np.asarray(cost.beta, dtype=float)
    if np.any(beta < 0) or not np.any(beta > 0):
        violations.append("(A4): cost weights must be nonnegative and not all zero")
    u_bar = kwargs.get("u_bar", 1.0)
    r0 = kwargs.get("r0", 10.0)
    if np.any(np.asarray(u_bar) < 0) or r0 <= 0:
        violations.append("(A5): control bounds must make the admissible set nonempty")
    if dt <= 0 or t_final <= 0:
        violations.append("time grid: dt and t_final must be positive")
    elif abs(t_final / dt - round(t_final / dt)) > 1e-9:
        violations.append("time grid: t_final must be an integer multiple of dt")

    if violations:
        raise ValidationError(violations)

    phys = PhysParams(tau=tau, t_final=t_final, dt=dt, rho0=rho0)
    return ProblemSpec(grid=grid, phys=phys, potential=potential, cost=cost, **kwargs)
