"""Simulation scenarios: stationary Gaussian, Tukey g-and-h, nonstationary mean plus GP."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .covariance import CovarianceModel, MaternParams, assemble, cholesky
from .errors import ArgumentError, ConfigurationError
from .spatial import BivariateObservations, SiteSet, unit_grid

KINDS = ("gaussian", "tukey_gh", "nonstationary")

GAUSSIAN_PROFILE = CovarianceModel(
    MaternParams(sigma2_1=0.89, sigma2_2=1.3, rho=0.8, nu_1=0.8, nu_2=0.8, alpha_1=0.2, alpha_2=0.4)
)
NONSTATIONARY_VARIANCE = 0.01


@dataclass(frozen=True)
class TukeyGH:
    g: float
    h: float

    def __post_init__(self):
        if not (self.h >= 0):
            raise ConfigurationError(f"Tukey h must be nonnegative, got {self.h}")


TUKEY_PROFILE = (TukeyGH(0.5, 1.5), TukeyGH(-0.4, 1.3))


def replicate_seed(seed: int, replicate: int) -> np.random.SeedSequence:
    """Seed for replicate ``r``: numpy's SeedSequence hash of the pair ``(seed, r)``."""
    return np.random.SeedSequence([int(seed), int(replicate)])


def _draw(L: np.ndarray, seed, n: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal(L.shape[0])
    y = L @ xi
    return y[:n], y[n:]


def sample_gp(model: CovarianceModel, sites: SiteSet, seed) -> BivariateObservations:
    """Zero-mean draw ``L xi`` with ``L`` the Cholesky factor of the stacked covariance."""
    L = cholesky(assemble(model, sites))
    z1, z2 = _draw(L, seed, len(sites))
    return BivariateObservations(sites, z1, z2)


def tukey_gh(z, g: float, h: float):
    """``(exp(g z) - 1) / g * exp(h z^2 / 2)``; the ``g = 0`` limit is ``z exp(h z^2 / 2)``."""
    z_arr = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z_arr)):
        raise ArgumentError("tukey_gh input must be finite")
    if g == 0.0:
        base = z_arr
    else:
        base = np.expm1(g * z_arr) / g
    out = base * np.exp(h * z_arr**2 / 2.0)
    if np.ndim(z) == 0:
        return float(out)
    return out


def nonstationary_mean(s) -> tuple:
    """Deterministic mean pair driven by ``(x + y) / 2``; vectorised over ``(N, 2)`` input."""
    s = np.asarray(s, dtype=float)
    t = 0.5 * (s[..., 0] + s[..., 1]) - 0.9
    mu1 = np.sin(5.0 * t) * np.cos(25.0 * t**4) + t / 2.0
    mu2 = np.sin(2.0 * t) * np.cos(30.0 * t**4) - t / 2.0
    if s.ndim == 1:
        return float(mu1), float(mu2)
    return mu1, mu2


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation design.

    ``grid`` is ``(nx, ny)`` on the unit square; ``random_sites`` switches to
    uniformly scattered sites instead.  For ``nonstationary`` the GP residual
    uses ``model`` with both marginal variances replaced by
    ``residual_variance``.
    """

    kind: str = "gaussian"
    grid: tuple = (40, 30)
    random_sites: int | None = None
    model: CovarianceModel = GAUSSIAN_PROFILE
    tukey: tuple | None = None
    residual_variance: float = NONSTATIONARY_VARIANCE
    seed: int = 0
    replicates: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown scenario kind {self.kind!r}; choose from {KINDS}")
        if (self.tukey is not None) != (self.kind == "tukey_gh"):
            raise ConfigurationError("tukey parameters are required for, and only for, kind 'tukey_gh'")
        if self.tukey is not None and len(self.tukey) != 2:
            raise ConfigurationError("tukey needs one (g, h) pair per variable")
        if self.replicates < 1:
            raise ConfigurationError("replicates must be at least 1")
        if self.residual_variance < 0:
            raise ConfigurationError("residual_variance must be nonnegative")

    def sites(self) -> SiteSet:
        if self.random_sites is not None:
            rng = np.random.default_rng(np.random.SeedSequence([int(self.seed), 2**31 - 1]))
            return SiteSet(rng.uniform(size=(int(self.random_sites), 2)))
        nx, ny = self.grid
        return unit_grid(int(nx), int(ny))

    def residual_model(self) -> CovarianceModel:
        p = self.model.params
        if not isinstance(p, MaternParams):
            raise ConfigurationError("the nonstationary scenario needs a Matérn residual model")
        v = self.residual_variance
        return replace(self.model, params=replace(p, sigma2_1=max(v, 1e-300), sigma2_2=max(v, 1e-300)))


def generate(cfg: ScenarioConfig) -> list[BivariateObservations]:
    sites = cfg.sites()
    n = len(sites)
    out = []
    if cfg.kind == "nonstationary":
        mu1, mu2 = nonstationary_mean(sites.coords)
        L = None if cfg.residual_variance == 0 else cholesky(assemble(cfg.residual_model(), sites))
        for r in range(cfg.replicates):
            if L is None:
                e1 = e2 = np.zeros(n)
            else:
                e1, e2 = _draw(L, replicate_seed(cfg.seed, r), n)
            out.append(BivariateObservations(sites, mu1 + e1, mu2 + e2))
        return out
    L = cholesky(assemble(cfg.model, sites))
    for r in range(cfg.replicates):
        z1, z2 = _draw(L, replicate_seed(cfg.seed, r), n)
        if cfg.kind == "tukey_gh":
            t1, t2 = cfg.tukey
            z1, z2 = tukey_gh(z1, t1.g, t1.h), tukey_gh(z2, t2.g, t2.h)
        out.append(BivariateObservations(sites, z1, z2))
    return out
