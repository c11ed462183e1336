"""The transport-adapted modified inner product and its coercivity functional.

The plain weighted norm sees only the collision dissipation; adding a small
cross term  2 eps delta < grad (I-Lap)^{-1} rho_eps[f], j_eps[f] >  makes the
full generator strictly dissipative. ``select_delta`` picks the mixing weight
empirically on an ensemble (the admissible delta is only known to be "small
enough"), and ``coercivity_functional`` measures the resulting decay constant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .elliptic import EllipticSolver, SpatialGrid, l2x
from .equilibrium import Equilibrium, micro_part, weighted_norm_H
from .moments import compute_moments
from .velocity import VelocityGrid


class NormError(RuntimeError):
    pass


@dataclass
class ModifiedNorm:
    """Norm context: delta, eps, and the solver/grid/equilibrium references."""

    delta: float
    eps: float
    solver: EllipticSolver
    M: Equilibrium
    vgrid: VelocityGrid
    sgrid: SpatialGrid

    def _cross(self, f: np.ndarray, g: np.ndarray) -> float:
        """< grad (I-Lap)^{-1} rho_eps[f], j_eps[g] > in L^2_x."""
        mf = compute_moments(f, self.eps, self.M, self.vgrid)
        mg = compute_moments(g, self.eps, self.M, self.vgrid)
        u = self.solver.solve(mf.rho_eps)
        return float(np.sum(self.solver.gradient(u) * mg.j_eps) * self.sgrid.dx)

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        w, Mv = self.vgrid.weights, self.M.values
        base = float(np.einsum("ik,ik,k->", np.atleast_2d(f), np.atleast_2d(g),
                               w / Mv)) * self.sgrid.dx
        ed = self.eps * self.delta
        return base + ed * self._cross(f, g) + ed * self._cross(g, f)

    def norm_sq(self, f: np.ndarray) -> float:
        base = weighted_norm_H(f, self.M, self.vgrid, self.sgrid.dx) ** 2
        return base + 2 * self.eps * self.delta * self._cross(f, f)

    def h_norm_sq(self, f: np.ndarray) -> float:
        return weighted_norm_H(f, self.M, self.vgrid, self.sgrid.dx) ** 2


def select_delta(solver: EllipticSolver, M: Equilibrium, vgrid: VelocityGrid,
                 sgrid: SpatialGrid, ensemble: list[np.ndarray], eps_list,
                 margin: float = 0.5, ladder_start: float = 1.0,
                 ladder_len: int = 24) -> float:
    """Largest dyadic delta whose cross term stays below ``margin`` times the
    squared norm for every ensemble member and every eps in the sweep."""
    delta = ladder_start
    for _ in range(ladder_len):
        ok = True
        for eps in eps_list:
            mn = ModifiedNorm(delta=delta, eps=eps, solver=solver, M=M,
                              vgrid=vgrid, sgrid=sgrid)
            for f in ensemble:
                h2 = mn.h_norm_sq(f)
                if h2 <= 0:
                    continue
                if abs(2 * eps * delta * mn._cross(f, f)) > margin * h2:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            return delta
        delta *= 0.5
    raise NormError("no admissible delta found on the dyadic ladder "
                    "(cross-term quadratures are inconsistent)")


def coercivity_functional(f: np.ndarray, generator, mn: ModifiedNorm,
                          mass_tol: float = 1e-12) -> dict:
    """<< Lambda_eps f, f >>_eps against the dissipation budget.

    Returns the bilinear form value, the squared modified norm, and the
    squared microscopic part scaled by eps^{-2s}; the measured constant is
    c = -lhs / (norm_sq + eps^{-2s} micro_sq).
    """
    f = np.atleast_2d(f)
    mass = float(f @ mn.vgrid.weights @ np.full(f.shape[0], mn.sgrid.dx))
    scale = weighted_norm_H(f, mn.M, mn.vgrid, mn.sgrid.dx)
    if scale > 0 and abs(mass) > mass_tol * max(1.0, scale):
        raise NormError(f"field carries net mass {mass:.2e}; project it first")
    lam_f = generator.apply(f)
    lhs = mn.inner(lam_f, f)
    nsq = mn.norm_sq(f)
    fperp = micro_part(f, mn.M, mn.vgrid)
    micro_sq = weighted_norm_H(fperp, mn.M, mn.vgrid, mn.sgrid.dx) ** 2
    s = mn.M.s
    budget = nsq + mn.eps ** (-2 * s) * micro_sq
    ratio = -lhs / budget if budget > 0 else math.nan
    return {"eps": mn.eps, "delta": mn.delta, "lhs": lhs, "norm_sq": nsq,
            "H_norm_sq": mn.h_norm_sq(f), "micro_sq": micro_sq, "ratio": ratio}
