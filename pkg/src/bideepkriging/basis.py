"""Multiresolution Wendland radial-basis embedding of planar sites."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ArgumentError, ConfigurationError
from .spatial import SiteSet, write_rows

WENDLAND_MAX = 13.0 / 3.0

BANDWIDTH_RULES = ("overlap", "literal")


def wendland(d):
    """Wendland function ``(1-d)^6 (35 d^2 + 18 d + 13) / 3`` on ``[0, 1]``, zero beyond.

    Accepts scalars or arrays; negative or NaN distances raise.
    """
    d_arr = np.asarray(d, dtype=float)
    if np.any(np.isnan(d_arr)) or np.any(d_arr < 0):
        raise ArgumentError("wendland distance must be nonnegative and not NaN")
    inside = d_arr <= 1.0
    dc = np.where(inside, d_arr, 1.0)
    out = np.where(inside, (1.0 - dc) ** 6 / 3.0 * (35.0 * dc**2 + 18.0 * dc + 13.0), 0.0)
    if np.ndim(d) == 0:
        return float(out)
    return out


def bandwidth(K: int, rule: str = "overlap", factor: float = 2.5) -> float:
    """Support radius for a level with ``K`` knots on the unit square.

    ``overlap`` gives ``factor / sqrt(K)``, roughly ``factor`` knot spacings,
    so every site sees several knots of every level.  ``literal`` gives
    ``1 / (factor sqrt(K))``, which leaves gaps between neighbouring knots.
    """
    if rule == "overlap":
        return factor / math.sqrt(K)
    if rule == "literal":
        return 1.0 / (factor * math.sqrt(K))
    raise ConfigurationError(f"unknown bandwidth rule {rule!r}; choose from {BANDWIDTH_RULES}")


@dataclass(frozen=True)
class BasisConfig:
    """Knot levels and support radii.

    ``resolutions`` holds per-level knot counts, each a perfect square laid
    out as a regular grid over ``domain_bounds`` ``(xmin, xmax, ymin, ymax)``.
    ``thetas`` overrides the rule-derived radii (in domain units, for the
    unit square; radii are scaled by the domain's larger side otherwise).
    ``knots`` supplies explicit per-level knot arrays instead of grids.
    """

    resolutions: Sequence[int] = (25, 81, 81)
    domain_bounds: Sequence[float] = (0.0, 1.0, 0.0, 1.0)
    bandwidth_rule: str = "overlap"
    bandwidth_factor: float = 2.5
    thetas: Sequence[float] | None = None
    knots: Sequence[Sequence[Sequence[float]]] | None = field(default=None, compare=True)

    def __post_init__(self):
        b = tuple(float(v) for v in self.domain_bounds)
        if len(b) != 4 or not (b[1] > b[0] and b[3] > b[2]) or not all(map(math.isfinite, b)):
            raise ConfigurationError(f"domain_bounds must be (xmin, xmax, ymin, ymax) with positive extent, got {b}")
        object.__setattr__(self, "domain_bounds", b)
        if self.knots is not None:
            kn = tuple(tuple(tuple(float(c) for c in u) for u in level) for level in self.knots)
            if not kn or any(len(level) == 0 for level in kn):
                raise ConfigurationError("explicit knot levels must be nonempty")
            object.__setattr__(self, "knots", kn)
            object.__setattr__(self, "resolutions", tuple(len(level) for level in kn))
        res = tuple(int(k) for k in self.resolutions)
        if not res or any(k < 1 for k in res):
            raise ConfigurationError(f"every level needs at least one knot, got {res}")
        object.__setattr__(self, "resolutions", res)
        if self.bandwidth_rule not in BANDWIDTH_RULES:
            raise ConfigurationError(f"unknown bandwidth rule {self.bandwidth_rule!r}")
        if not (self.bandwidth_factor > 0):
            raise ConfigurationError("bandwidth_factor must be positive")
        if self.thetas is not None:
            th = tuple(float(t) for t in self.thetas)
            if len(th) != len(res) or any(not (t > 0) for t in th):
                raise ConfigurationError("thetas must give one positive radius per level")
            object.__setattr__(self, "thetas", th)

    @property
    def n_basis(self) -> int:
        return sum(self.resolutions)

    def level_thetas(self) -> tuple[float, ...]:
        if self.thetas is not None:
            return self.thetas
        b = self.domain_bounds
        scale = max(b[1] - b[0], b[3] - b[2])
        return tuple(scale * bandwidth(k, self.bandwidth_rule, self.bandwidth_factor) for k in self.resolutions)

    def to_dict(self) -> dict:
        return {
            "resolutions": list(self.resolutions),
            "domain_bounds": list(self.domain_bounds),
            "bandwidth_rule": self.bandwidth_rule,
            "bandwidth_factor": self.bandwidth_factor,
            "thetas": None if self.thetas is None else list(self.thetas),
            "knots": None if self.knots is None else [[list(u) for u in lv] for lv in self.knots],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BasisConfig":
        return cls(**d)


def make_knots(cfg: BasisConfig) -> list[SiteSet]:
    """Per-level knot grids; level ``l`` is a ``sqrt(K_l) x sqrt(K_l)`` grid including the edges."""
    if cfg.knots is not None:
        return [SiteSet(np.array(level)) for level in cfg.knots]
    xmin, xmax, ymin, ymax = cfg.domain_bounds
    levels = []
    for k in cfg.resolutions:
        m = math.isqrt(k)
        if m * m != k:
            raise ConfigurationError(f"knot count {k} is not a perfect square; pass explicit knots instead")
        if m == 1:
            xs, ys = np.array([(xmin + xmax) / 2]), np.array([(ymin + ymax) / 2])
        else:
            xs, ys = np.linspace(xmin, xmax, m), np.linspace(ymin, ymax, m)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        levels.append(SiteSet(np.column_stack([gx.ravel(), gy.ravel()])))
    return levels


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    col_names: tuple[str, ...]
    n_basis: int

    @property
    def basis(self) -> np.ndarray:
        return self.values[:, : self.n_basis]

    @property
    def covariates(self) -> np.ndarray:
        return self.values[:, self.n_basis:]

    def to_csv(self, path):
        write_rows(path, self.col_names, self.values.T)


def basis_matrix(coords: np.ndarray, cfg: BasisConfig, knots: list[SiteSet] | None = None) -> np.ndarray:
    knots = make_knots(cfg) if knots is None else knots
    blocks = []
    for level, theta in zip(knots, cfg.level_thetas()):
        d = cdist(coords, level.coords) / theta
        blocks.append(wendland(d))
    return np.hstack(blocks)


def embed(sites: SiteSet, cfg: BasisConfig, covariates=None) -> FeatureMatrix:
    """Basis columns for every knot of every level, then covariate columns unchanged."""
    coords = sites.coords if isinstance(sites, SiteSet) else SiteSet(sites).coords
    phi = basis_matrix(coords, cfg)
    names = [f"phi_{lv}_{j}" for lv, k in enumerate(cfg.resolutions) for j in range(k)]
    if covariates is not None:
        cov = np.asarray(covariates, dtype=float)
        if cov.ndim == 1:
            cov = cov[:, None]
        if cov.shape[0] != coords.shape[0]:
            raise ArgumentError(f"covariates have {cov.shape[0]} rows for {coords.shape[0]} sites")
        phi = np.hstack([phi, cov])
        names += [f"x_{j}" for j in range(cov.shape[1])]
    return FeatureMatrix(phi, tuple(names), cfg.n_basis)
