"""Classical and eps-weighted macroscopic moments and their scaling probes.

The weight 1/<eps v>^2 keeps first and second moments finite for densities
with <v>^{-1-2s} tails; as eps -> 0 the weighted moments converge to the
classical ones while their microscopic parts scale like eps^s, eps^{s-1} and
eps^{s-2}. Those exponents, together with the 2s-2 law for the weighted
second moment of the equilibrium itself, are what the probe fits check.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .elliptic import SpatialGrid, l2x
from .equilibrium import Equilibrium, local_mass, micro_part
from .velocity import VelocityGrid


class MomentError(RuntimeError):
    pass


def eps_weight(grid: VelocityGrid, eps: float) -> np.ndarray:
    return 1.0 / (1.0 + (eps * grid.nodes) ** 2)


def c_eps(M: Equilibrium, grid: VelocityGrid, eps: float) -> float:
    """sum M w / <eps v>^2; increases to 1 as eps -> 0."""
    return float(np.dot(grid.weights * eps_weight(grid, eps), M.values))


@dataclass(frozen=True)
class MacroFields:
    rho: np.ndarray
    j: np.ndarray
    rho_eps: np.ndarray
    j_eps: np.ndarray
    c_eps: float


def compute_moments(f: np.ndarray, eps: float, M: Equilibrium,
                    grid: VelocityGrid) -> MacroFields:
    f = np.atleast_2d(f)
    if f.shape[1] != grid.n:
        raise MomentError("field does not match the velocity grid")
    w = grid.weights
    ww = w * eps_weight(grid, eps)
    return MacroFields(
        rho=f @ w,
        j=f @ (w * grid.nodes),
        rho_eps=f @ ww,
        j_eps=f @ (ww * grid.nodes),
        c_eps=c_eps(M, grid, eps),
    )


def weighted_second_moment(f: np.ndarray, eps: float, grid: VelocityGrid) -> np.ndarray:
    """sum_k v^2 f w / <eps v>^2 per cell (the moment entering the flux law)."""
    ww = grid.weights * grid.nodes ** 2 * eps_weight(grid, eps)
    return np.atleast_2d(f) @ ww


def second_moment_weighted(M: Equilibrium, eps: float, grid: VelocityGrid) -> float:
    """m2(eps) = sum v^2 M w / <eps v>^2 for the equilibrium itself."""
    return float(weighted_second_moment(M.values[None, :], eps, grid)[0])


def fit_loglog_slope(eps_list, values) -> float:
    x = np.log(np.asarray(eps_list, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def second_moment_scaling(M: Equilibrium, grid: VelocityGrid, eps_list,
                          tol: float = 0.3) -> dict:
    """Fit m2(eps) ~ eps^{2s-2}; raises when the sweep leaves the resolved range."""
    eps_list = list(eps_list)
    if min(eps_list) * grid.vmax < 10.0:
        raise MomentError("vmax too small for the smallest eps in the sweep")
    vals = [second_moment_weighted(M, e, grid) for e in eps_list]
    slope = fit_loglog_slope(eps_list, vals)
    target = 2 * M.s - 2
    prefactors = [m2 * e ** (2 - 2 * M.s) for m2, e in zip(vals, eps_list)]
    if abs(slope - target) > tol:
        raise MomentError(
            f"weighted second moment slope {slope:.3f} deviates from {target:.3f}"
        )
    return {"slope": slope, "target": target, "values": vals,
            "prefactors": prefactors}


# ---------------------------------------------------------------------------
# scaling probe fields


def probe_micro_profile(s: float, grid: VelocityGrid, mu: float = 0.25) -> np.ndarray:
    """Velocity profile with <v>^{-1-s}-class even and odd tails, discretely
    mass-free (a compact Gaussian bump absorbs the even mass)."""
    v = grid.nodes
    even = (1.0 + v * v) ** (-(1 + s) / 2)
    bump = np.exp(-v * v)
    even = even - bump * (np.dot(grid.weights, even) / np.dot(grid.weights, bump))
    odd = v * (mu * mu + v * v) ** (-(2 + s) / 2)
    return even + odd


def moment_scaling_probe(f_perp: np.ndarray, s: float, M: Equilibrium,
                         grid: VelocityGrid, sgrid: SpatialGrid, eps_list,
                         tol: float = 0.15) -> dict:
    """Fitted log-log slopes of the weighted moments of a fixed microscopic
    field against eps; contracts: s, s-1, s-2 within tol."""
    f_perp = np.atleast_2d(f_perp)
    rho = local_mass(f_perp, grid)
    if np.abs(rho).max() > 1e-8 * np.abs(f_perp).max():
        raise MomentError("probe field must be mean-free per cell")
    eps_list = list(eps_list)
    rows = {"rho_eps": [], "j_eps": [], "second": []}
    for e in eps_list:
        mf = compute_moments(f_perp, e, M, grid)
        rows["rho_eps"].append(l2x(mf.rho_eps, sgrid))
        rows["j_eps"].append(l2x(mf.j_eps, sgrid))
        rows["second"].append(l2x(weighted_second_moment(f_perp, e, grid), sgrid))
    slopes = {k: fit_loglog_slope(eps_list, vals) for k, vals in rows.items()}
    targets = {"rho_eps": s, "j_eps": s - 1, "second": s - 2}
    for k in slopes:
        if abs(slopes[k] - targets[k]) > tol:
            raise MomentError(
                f"{k} slope {slopes[k]:.3f} deviates from {targets[k]:.3f} "
                "beyond tolerance (velocity tails under-resolved?)"
            )
    return {"slopes": slopes, "targets": targets, "norms": rows}
