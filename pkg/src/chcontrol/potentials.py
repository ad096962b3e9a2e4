"""Nonlinearities: logarithmic potential, quench scaling, smooth parts,
and the double-obstacle complementarity helpers.

The convex logarithmic potential is

    h(y) = (1 - y) ln(1 - y) + (1 + y) ln(1 + y),   h(+-1) = 2 ln 2,

with h'(y) = ln((1+y)/(1-y)) and h''(y) = 2/(1-y^2).  Scaled by a factor
phi(alpha) = alpha^p that vanishes as alpha -> 0, the monotone graph
phi(alpha) h' approximates the subdifferential of the indicator of [-1, 1];
the obstacle helpers realize that subdifferential directly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

# derivatives blow up at +-1; refuse evaluation closer than this
DERIVATIVE_GUARD = 1e-14


def h(y):
    """Logarithmic potential on [-1, 1], endpoint values 2 ln 2."""
    y = np.asarray(y, dtype=float)
    if np.any(np.abs(y) > 1.0):
        raise ValueError("h is defined on [-1, 1]")
    # evaluate away from the endpoints so the formula never sees log(0)
    yc = np.where(np.abs(y) == 1.0, 0.0, y)
    vals = (1.0 - yc) * np.log1p(-yc) + (1.0 + yc) * np.log1p(yc)
    vals = np.where(np.abs(y) == 1.0, 2.0 * np.log(2.0), vals)
    return vals if vals.ndim else float(vals)


def _check_interior(y):
    y = np.asarray(y, dtype=float)
    if np.any(np.abs(y) >= 1.0 - DERIVATIVE_GUARD):
        worst = float(np.max(np.abs(y)))
        raise ValueError(f"derivative of h requested at |y| = {worst:.17g} >= 1 - 1e-14")
    return y


def h_prime(y):
    """h'(y) = ln((1+y)/(1-y)), strictly increasing on (-1, 1)."""
    y = _check_interior(y)
    vals = np.log1p(y) - np.log1p(-y)
    return vals if vals.ndim else float(vals)


def h_second(y):
    """h''(y) = 2/(1-y^2) > 0."""
    y = _check_interior(y)
    vals = 2.0 / ((1.0 - y) * (1.0 + y))
    return vals if vals.ndim else float(vals)


def h_prime_inverse(v):
    """Inverse of h' on the real line: y = tanh(v/2)."""
    v = np.asarray(v, dtype=float)
    vals = np.tanh(0.5 * v)
    return vals if vals.ndim else float(vals)


@dataclass(frozen=True)
class QuenchParams:
    """Quench scaling phi(alpha) = alpha**p for alpha in (0, 1]."""

    alpha: float
    p_exponent: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.p_exponent <= 0.0:
            raise ValueError("p must be positive")

    @property
    def phi(self) -> float:
        return self.alpha**self.p_exponent


def quench_term(y, q: QuenchParams):
    """(phi(alpha) h'(y), phi(alpha) h''(y)); the derivative is >= 2 phi."""
    return q.phi * h_prime(y), q.phi * h_second(y)


def quench_schedule(alpha0: float, ratio: float, levels: int, p: float = 1.0):
    """Strictly decreasing schedule alpha0 * ratio**n, n = 0..levels-1."""
    if not (0.0 < alpha0 <= 1.0) or not (0.0 < ratio < 1.0) or levels < 1:
        raise ValueError("need alpha0 in (0,1], ratio in (0,1), levels >= 1")
    return [QuenchParams(alpha0 * ratio**n, p) for n in range(levels)]


@dataclass(frozen=True)
class SmoothPotential:
    """Polynomial smooth parts pi and pi_Gamma on [-1, 1] (ascending
    coefficients).  Default pi = pi_Gamma = -y reproduces the classical
    double-obstacle free energy together with the indicator part."""

    pi_coeffs: tuple = (0.0, -1.0)
    pi_gamma_coeffs: tuple = (0.0, -1.0)

    def _eval(self, coeffs, y):
        y = np.asarray(y, dtype=float)
        if np.any(np.abs(y) > 1.0 + 1e-12):
            warnings.warn("smooth potential evaluated outside [-1, 1]; clamping")
            y = np.clip(y, -1.0, 1.0)
        c = np.asarray(coeffs, dtype=float)
        val = np.polynomial.polynomial.polyval(y, c)
        der = np.polynomial.polynomial.polyval(y, np.polynomial.polynomial.polyder(c))
        if val.ndim == 0:
            return float(val), float(der)
        return val, der

    def pi_eval(self, y):
        return self._eval(self.pi_coeffs, y)

    def pi_gamma_eval(self, y):
        return self._eval(self.pi_gamma_coeffs, y)


def obstacle_projection(y):
    """Clamp to [-1, 1]; flag is +1/-1 where the upper/lower bound is
    attained (values exactly on a bound count as active), 0 elsewhere."""
    y = np.asarray(y, dtype=float)
    clamped = np.clip(y, -1.0, 1.0)
    flag = np.zeros(clamped.shape, dtype=int)
    flag = np.where(clamped >= 1.0, 1, flag)
    flag = np.where(clamped <= -1.0, -1, flag)
    if clamped.ndim == 0:
        return float(clamped), int(flag)
    return clamped, flag


@dataclass
class ObstacleMultiplier:
    """Multiplier (xi, xi_Gamma) of the obstacle constraint, with the
    active-set masks it was computed on (+1 upper, -1 lower, 0 inactive)."""

    xi_bulk: np.ndarray
    xi_bottom: np.ndarray
    xi_top: np.ndarray
    active_bulk: np.ndarray = None
    active_bottom: np.ndarray = None
    active_top: np.ndarray = None

    def check_complementarity(self, rho, tol: float = 1e-9) -> bool:
        """xi = 0 where |rho| < 1, xi >= 0 where rho = 1, xi <= 0 where
        rho = -1 (componentwise on bulk and both circles)."""
        for xi, r in (
            (self.xi_bulk, rho.bulk),
            (self.xi_bottom, rho.bottom),
            (self.xi_top, rho.top),
        ):
            interior = np.abs(r) < 1.0 - tol
            if np.any(np.abs(xi[interior]) > tol):
                return False
            if np.any(xi[r >= 1.0 - tol] < -tol):
                return False
            if np.any(xi[r <= -1.0 + tol] > tol):
                return False
            if np.any(np.abs(r) > 1.0 + tol):
                return False
        return True
