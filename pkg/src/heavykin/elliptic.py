"""Neumann/periodic inverse of (Id - d^2/dx^2) on a uniform 1-D grid.

Cell-centered finite volumes: the discrete operator is I + G^T G with G the
interface gradient, so it is symmetric positive definite, exact on constants,
and its eigenvectors are discrete cosines (slab) or Fourier modes (torus).
Divergence data eta2 enters in weak form, which reproduces the natural flux
boundary condition grad u . n = -eta2 . n.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve


class EllipticError(RuntimeError):
    pass


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform cells on a slab (0, length) or a torus of the same length."""

    kind: str                      # "slab" | "torus"
    nx: int
    length: float = 1.0

    def __post_init__(self):
        if self.kind not in ("slab", "torus"):
            raise ValueError(f"unknown geometry {self.kind!r}")
        if self.nx < 4:
            raise ValueError("need at least 4 cells")

    @property
    def dx(self) -> float:
        return self.length / self.nx

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.dx

    @property
    def wall_normals(self) -> tuple[float, float]:
        """Outward normals at x=0 and x=length (slab only)."""
        return (-1.0, 1.0)


class EllipticSolver:
    """Factorized solver for (I - Laplacian) u = eta1 + d/dx eta2 with zero-flux
    (slab) or periodic (torus) closure."""

    def __init__(self, grid: SpatialGrid):
        self.grid = grid
        nx, dx = grid.nx, grid.dx
        if dx <= 0 or not np.isfinite(dx):
            raise EllipticError("degenerate cell size")
        if grid.kind == "slab":
            # interior interfaces only: Neumann is the natural condition
            G = np.zeros((nx - 1, nx))
            idx = np.arange(nx - 1)
            G[idx, idx] = -1.0 / dx
            G[idx, idx + 1] = 1.0 / dx
        else:
            G = np.zeros((nx, nx))
            idx = np.arange(nx)
            G[idx, idx] = -1.0 / dx
            G[idx, (idx + 1) % nx] = 1.0 / dx
        self._G = G
        self._A = np.eye(nx) + G.T @ G
        self._chol = cho_factor(self._A)
        lam = np.sort(np.linalg.eigvalsh(G.T @ G))
        self.lambda1 = float(lam[1])   # first nonzero eigenvalue of the Laplacian part

    def solve(self, eta1: np.ndarray, eta2: np.ndarray | None = None) -> np.ndarray:
        """u with (I - dxx) u = eta1 + dx eta2, flux b.c. grad u.n = -eta2.n."""
        eta1 = np.asarray(eta1, dtype=float)
        if eta1.shape[-1] != self.grid.nx:
            raise EllipticError("right-hand side does not match the grid")
        rhs = eta1.copy()
        if eta2 is not None:
            eta2 = np.asarray(eta2, dtype=float)
            rhs = rhs - self._interface_div(eta2)
        return cho_solve(self._chol, rhs.T).T

    def _interface_div(self, eta2: np.ndarray) -> np.ndarray:
        """G^T applied to the interface average of eta2 (weak divergence data)."""
        if self.grid.kind == "slab":
            face = 0.5 * (eta2[..., 1:] + eta2[..., :-1])
        else:
            face = 0.5 * (eta2 + np.roll(eta2, -1, axis=-1))
        return face @ self._G

    def gradient(self, u: np.ndarray) -> np.ndarray:
        """Cell-centered gradient; one-sided ghost closure matches zero flux."""
        dx = self.grid.dx
        if self.grid.kind == "torus":
            return (np.roll(u, -1, axis=-1) - np.roll(u, 1, axis=-1)) / (2 * dx)
        g = np.empty_like(u)
        g[..., 1:-1] = (u[..., 2:] - u[..., :-2]) / (2 * dx)
        g[..., 0] = (u[..., 1] - u[..., 0]) / (2 * dx)
        g[..., -1] = (u[..., -1] - u[..., -2]) / (2 * dx)
        return g

    def h1_norm(self, u: np.ndarray) -> float:
        dx = self.grid.dx
        return float(np.sqrt(np.sum(u * u) * dx + np.sum((self._G @ u) ** 2) * dx))

    def second_difference(self, u: np.ndarray) -> np.ndarray:
        return self._G.T @ (self._G @ u)

    def wall_values(self, u: np.ndarray) -> tuple[float, float]:
        """Linear extrapolation of cell values to the two walls (slab)."""
        if self.grid.kind != "slab":
            raise EllipticError("wall traces only exist on the slab")
        return (1.5 * u[0] - 0.5 * u[1], 1.5 * u[-1] - 0.5 * u[-2])

    def wall_gradients(self, u: np.ndarray) -> tuple[float, float]:
        """One-sided gradient estimates at the walls."""
        dx = self.grid.dx
        return ((u[1] - u[0]) / dx, (u[-1] - u[-2]) / dx)


def l2x(field: np.ndarray, grid: SpatialGrid) -> float:
    """Cell-measure L^2 norm in x."""
    return float(np.sqrt(np.sum(np.asarray(field) ** 2) * grid.dx))
