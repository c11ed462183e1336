"""Equilibrium velocity densities and the weighted L^2 geometry they induce.

Two families span the collision kernels used here:

* ``eval_M1``: the explicit density c_s <v>^{-1-2s}.
* ``eval_M2``: the stationary density of the fractional Fokker-Planck
  operator -(-d^2/dv^2)^s + d/dv(v .), i.e. the symmetric 2s-stable law with
  characteristic function exp(-|xi|^{2s}/(2s)). It is evaluated by numerical
  Fourier inversion for moderate v and by the power tail series beyond.

All discrete masses are renormalized to exactly 1 so micro/macro projections
are exact in floating point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.special import gamma

from .velocity import VelocityGrid

_SERIES_CROSSOVER = 25.0


class EquilibriumError(RuntimeError):
    pass


def m1_constant(s: float) -> float:
    """Normalization c_s with c_s * integral <v>^{-1-2s} dv = 1 (d=1)."""
    return gamma(s + 0.5) / (math.sqrt(math.pi) * gamma(s))


def stable_pdf(x: float, s: float) -> float:
    """Density of the symmetric stable law with char. function exp(-|xi|^{2s}/(2s)).

    Supported for 0 < s <= 1; s = 1 reproduces the standard Gaussian and is
    used only as an oracle sanity point.
    """
    g = 1.0 / (2.0 * s)
    alpha = 2.0 * s
    ax = abs(x)
    if ax <= _SERIES_CROSSOVER:
        env = lambda xi: math.exp(-g * xi ** alpha)
        if ax < 1e-8:
            val = quad(env, 0.0, np.inf, limit=200)[0]
        else:
            val = quad(env, 0.0, np.inf, weight="cos", wvar=ax, limlst=500)[0]
        return val / math.pi
    total, prev = 0.0, math.inf
    for k in range(1, 18):
        log_mag = (k * math.log(g) + math.lgamma(alpha * k + 1)
                   - math.lgamma(k + 1) - (alpha * k + 1) * math.log(ax))
        term = ((-1) ** (k + 1) * math.sin(k * math.pi * s)
                * (math.exp(log_mag) if log_mag > -745 else 0.0))
        if abs(term) > prev:
            break
        total += term
        prev = abs(term) if term != 0.0 else prev
    return total / math.pi


def stable_tail_constant(s: float) -> float:
    """Leading tail coefficient: stable_pdf(x, s) ~ const * |x|^{-1-2s}."""
    return math.sin(math.pi * s) * gamma(2 * s) / math.pi


@dataclass(frozen=True)
class Equilibrium:
    """Positive even density samples with discrete mass exactly 1."""

    kind: str                 # "M1" | "M2"
    s: float
    values: np.ndarray
    mass_renorm: float        # raw discrete mass divided out
    continuum_const: float    # c_s for M1, tail coefficient for M2

    def weighted(self, grid: VelocityGrid) -> float:
        return float(np.dot(grid.weights, self.values))


def _symmetrize(half_values: np.ndarray) -> np.ndarray:
    return np.concatenate([half_values[::-1], half_values])


def eval_M1(s: float, grid: VelocityGrid) -> Equilibrium:
    vpos = grid.nodes[grid.n // 2:]
    half = (1.0 + vpos ** 2) ** (-(1 + 2 * s) / 2)
    values = _symmetrize(half) * m1_constant(s)
    z = float(np.dot(grid.weights, values))
    return Equilibrium(kind="M1", s=s, values=values / z, mass_renorm=z,
                       continuum_const=m1_constant(s))


def eval_M2(s: float, grid: VelocityGrid) -> Equilibrium:
    """Stationary density of the fractional Fokker-Planck operator on the grid.

    The collision frequency nu(x) scales the operator and cancels from the
    stationary state, so it plays no role here.
    """
    vpos = grid.nodes[grid.n // 2:]
    half = np.array([stable_pdf(v, s) for v in vpos])
    values = _symmetrize(half)
    floor = -1e-12 * values.max()
    if np.any(values < floor):
        raise EquilibriumError("stable density came out negative beyond round-off")
    values = np.maximum(values, 0.0)
    z = float(np.dot(grid.weights, values))
    return Equilibrium(kind="M2", s=s, values=values / z, mass_renorm=z,
                       continuum_const=stable_tail_constant(s))


def equilibrium_for(kind: str, s: float, grid: VelocityGrid) -> Equilibrium:
    if kind in ("bgk", "boltzmann_kernel"):
        return eval_M1(s, grid)
    if kind == "levy_fp":
        return eval_M2(s, grid)
    raise ValueError(f"unknown operator kind {kind!r}")


# ---------------------------------------------------------------------------
# weighted-space geometry


def weighted_norm_sq_v(g: np.ndarray, M: Equilibrium, grid: VelocityGrid) -> float:
    """Velocity-only norm: sum g^2 M^{-1} w."""
    return float(np.dot(grid.weights, g * g / M.values))


def weighted_norm_H(f: np.ndarray, M: Equilibrium, grid: VelocityGrid,
                    dx: float) -> float:
    """Full norm (sum_x sum_k f^2 M^{-1} w dx)^{1/2} for f of shape (nx, nv)."""
    f = np.atleast_2d(f)
    if f.shape[1] != grid.n or M.values.size != grid.n:
        raise ValueError("field, equilibrium and grid sizes do not match")
    if np.any(M.values <= 0):
        raise ValueError("equilibrium must be positive at every node")
    cells = np.einsum("ik,k->i", f * f, grid.weights / M.values)
    return math.sqrt(float(cells.sum()) * dx)


def local_mass(f: np.ndarray, grid: VelocityGrid) -> np.ndarray:
    """rho[f](x) = sum_k f w_k per spatial cell."""
    return np.atleast_2d(f) @ grid.weights


def micro_part(f: np.ndarray, M: Equilibrium, grid: VelocityGrid) -> np.ndarray:
    """f - rho[f] M: the component orthogonal to the collision kernel."""
    f = np.atleast_2d(f)
    rho = f @ grid.weights
    return f - rho[:, None] * M.values[None, :]
