"""Model configuration and the registry of admissible coefficient profiles.

Collision kernels sigma(x, v, v') and collision frequencies nu(x) are picked
from a small closed-form registry so their lower/upper bounds can be checked
exactly instead of being sampled from arbitrary user code.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

OPERATOR_KINDS = ("bgk", "boltzmann_kernel", "levy_fp")
GEOMETRIES = ("slab", "torus")

EPS_SWEEP = (1.0, 0.5, 0.25, 0.125, 0.0625)


class ConfigError(ValueError):
    """Raised when a configuration violates a structural hypothesis."""


@dataclass(frozen=True)
class ProfileSpec:
    """Closed-form scalar profile on the spatial domain (or kernel in x only).

    name "const": value ``base`` everywhere.
    name "sin":   base + amp*sin(2*pi*x); requires base > |amp| >= 0.
    name "gauss_vv": 1 + amp*exp(-(v-v')^2), a genuinely (v,v')-dependent
                  symmetric kernel (sigma only); bounds [1, 1+amp].
    """

    name: str = "const"
    base: float = 1.0
    amp: float = 0.0

    def bounds(self) -> tuple[float, float]:
        if self.name == "const":
            return self.base, self.base
        if self.name == "sin":
            return self.base - abs(self.amp), self.base + abs(self.amp)
        if self.name == "gauss_vv":
            lo, hi = sorted((1.0, 1.0 + self.amp))
            return lo, hi
        raise ConfigError(f"unknown profile {self.name!r}")

    def validate(self) -> None:
        lo, _ = self.bounds()
        if lo <= 0:
            raise ConfigError(f"profile {self.name!r} not bounded below by a positive constant")

    def __call__(self, x):
        if self.name == "const":
            return self.base * np.ones_like(np.asarray(x, dtype=float))
        if self.name == "sin":
            return self.base + self.amp * np.sin(2 * math.pi * np.asarray(x, dtype=float))
        raise ConfigError(f"profile {self.name!r} is not a pure x-profile")

    def kernel(self, x, v, vp):
        """sigma(x, v, v') on broadcastable arrays; symmetric in (v, v')."""
        if self.name in ("const", "sin"):
            return np.broadcast_to(self(x), np.broadcast_shapes(np.shape(v), np.shape(vp))).copy()
        if self.name == "gauss_vv":
            v = np.asarray(v, dtype=float)
            vp = np.asarray(vp, dtype=float)
            return 1.0 + self.amp * np.exp(-((v - vp) ** 2))
        raise ConfigError(f"unknown profile {self.name!r}")

    def depends_on_v(self) -> bool:
        return self.name == "gauss_vv"


@dataclass
class ModelConfig:
    """All run parameters: scaling exponent s, diffusion parameter eps,
    operator choice, coefficient profiles, wall accommodation, geometry."""

    s: float = 0.75
    eps: float = 1.0
    operator_kind: str = "bgk"
    sigma_spec: ProfileSpec = field(default_factory=ProfileSpec)
    nu_spec: ProfileSpec = field(default_factory=ProfileSpec)
    alpha: tuple[float, float] = (0.0, 0.0)
    geometry: str = "slab"
    delta: float = 0.05
    d: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.d != 1:
            raise ConfigError("only d = 1 velocity dimension is supported")
        if not 0.0 < self.s < 1.0:
            raise ConfigError(f"s must lie in (0, 1), got {self.s}")
        if not 0.0 < self.eps <= 1.0:
            raise ConfigError(f"eps must lie in (0, 1], got {self.eps}")
        if self.delta <= 0:
            raise ConfigError("delta must be positive")
        if self.operator_kind not in OPERATOR_KINDS:
            raise ConfigError(f"operator_kind must be one of {OPERATOR_KINDS}")
        if self.geometry not in GEOMETRIES:
            raise ConfigError(f"geometry must be one of {GEOMETRIES}")
        a0, a1 = self.alpha
        for a in (a0, a1):
            if not 0.0 <= a <= 1.0:
                raise ConfigError("accommodation coefficients must lie in [0, 1]")
        if (a0 != 0.0 or a1 != 0.0) and self.s <= 0.5:
            raise ConfigError(
                "diffusive wall emission requires s > 1/2 (the wall flux of the "
                "equilibrium diverges otherwise); set alpha = 0 or raise s"
            )
        self.sigma_spec.validate()
        self.nu_spec.validate()

    @property
    def alpha_is_zero(self) -> bool:
        return self.alpha == (0.0, 0.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alpha"] = list(self.alpha)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("sigma_spec", "nu_spec"):
            if key in d and isinstance(d[key], dict):
                d[key] = ProfileSpec(**d[key])
        if "alpha" in d:
            a = d["alpha"]
            d["alpha"] = (float(a), float(a)) if np.isscalar(a) else (float(a[0]), float(a[1]))
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ModelConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
