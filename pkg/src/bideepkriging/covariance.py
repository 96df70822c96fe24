"""Matérn correlation, bivariate Matérn and LMC cross-covariances, covariance assembly.

Stacked ordering everywhere: all variable-1 entries first, then all
variable-2 entries, matching ``BivariateObservations.z_vec``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist, pdist, squareform
from scipy.special import gammaln, kv

from .errors import ArgumentError, ConfigurationError, NumericError
from .spatial import SiteSet, as_site

SCALES = ("range", "inverse", "sqrt2nu")
CROSS_RANGE_RULES = ("inverse_quadratic", "min", "explicit")

_HALF_INTEGER = {
    0.5: lambda r: np.exp(-r),
    1.5: lambda r: (1.0 + r) * np.exp(-r),
    2.5: lambda r: (1.0 + r + r * r / 3.0) * np.exp(-r),
}


def _scaled_lag(h, nu, alpha, scale):
    if scale == "range":
        return h / alpha
    if scale == "inverse":
        return h * alpha
    if scale == "sqrt2nu":
        return math.sqrt(2.0 * nu) * h / alpha
    raise ConfigurationError(f"unknown Matérn scale {scale!r}; choose from {SCALES}")


def matern_bessel(r, nu):
    """``2^(1-nu) / Gamma(nu) r^nu K_nu(r)`` for scaled lags ``r >= 0`` via the Bessel function."""
    r = np.asarray(r, dtype=float)
    out = np.ones_like(r)
    pos = r > 0
    rp = r[pos]
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        logc = (1.0 - nu) * math.log(2.0) - gammaln(nu)
        val = np.exp(logc + nu * np.log(rp)) * kv(nu, rp)
    val = np.where(np.isfinite(val), val, 0.0)
    out[pos] = np.clip(val, 0.0, 1.0)
    return out


def matern_corr(h, nu: float, alpha: float, scale: str = "range"):
    """Matérn correlation at lag ``h``.

    With the default ``scale="range"`` this is
    ``2^(1-nu)/Gamma(nu) (h/alpha)^nu K_nu(h/alpha)``; ``nu`` in {0.5, 1.5, 2.5}
    uses the closed forms.  ``scale="sqrt2nu"`` rescales the lag by
    ``sqrt(2 nu)`` and ``scale="inverse"`` treats ``alpha`` as an inverse range.
    """
    if not (nu > 0) or not (alpha > 0):
        raise ArgumentError(f"Matérn needs nu > 0 and alpha > 0, got nu={nu}, alpha={alpha}")
    h_arr = np.asarray(h, dtype=float)
    if np.any(h_arr < 0) or np.any(np.isnan(h_arr)):
        raise ArgumentError("lag must be nonnegative")
    r = _scaled_lag(h_arr, nu, alpha, scale)
    closed = _HALF_INTEGER.get(float(nu))
    f = closed if closed is not None else (lambda x: matern_bessel(x, nu))
    if r.size > 4096:
        # distance matrices on grids repeat few distinct lags
        uniq, inv = np.unique(r, return_inverse=True)
        out = f(uniq)[inv].reshape(r.shape)
    else:
        out = f(r)
    if np.ndim(h) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class MaternParams:
    """Flexible bivariate Matérn.

    ``rho`` is the co-located correlation, so ``sigma_12 = rho sqrt(s1 s2)``.
    Cross smoothness defaults to the mean of the marginals; the cross range
    follows ``cross_range_rule`` unless given explicitly.
    """

    sigma2_1: float
    sigma2_2: float
    rho: float
    nu_1: float
    nu_2: float
    alpha_1: float
    alpha_2: float
    nu_12: float | None = None
    alpha_12: float | None = None
    cross_range_rule: str = "inverse_quadratic"
    scale: str = "range"

    def __post_init__(self):
        for name in ("sigma2_1", "sigma2_2", "nu_1", "nu_2", "alpha_1", "alpha_2"):
            v = float(getattr(self, name))
            if not (v > 0) or not math.isfinite(v):
                raise ConfigurationError(f"{name} must be positive and finite, got {v}")
        if not (-1.0 < self.rho < 1.0):
            raise ConfigurationError(f"rho must lie in (-1, 1), got {self.rho}")
        if self.scale not in SCALES:
            raise ConfigurationError(f"unknown Matérn scale {self.scale!r}")
        if self.cross_range_rule not in CROSS_RANGE_RULES:
            raise ConfigurationError(f"unknown cross range rule {self.cross_range_rule!r}")
        if self.cross_range_rule == "explicit" and self.alpha_12 is None:
            raise ConfigurationError("cross_range_rule 'explicit' requires alpha_12")
        for name in ("nu_12", "alpha_12"):
            v = getattr(self, name)
            if v is not None and not (v > 0):
                raise ConfigurationError(f"{name} must be positive, got {v}")

    @property
    def nu_cross(self) -> float:
        return self.nu_12 if self.nu_12 is not None else 0.5 * (self.nu_1 + self.nu_2)

    @property
    def alpha_cross(self) -> float:
        if self.alpha_12 is not None:
            return self.alpha_12
        a1, a2 = self.alpha_1, self.alpha_2
        if self.cross_range_rule == "min":
            return min(a1, a2)
        if self.scale == "inverse":
            return math.sqrt(0.5 * (a1**2 + a2**2))
        return 1.0 / math.sqrt(0.5 * (a1**-2 + a2**-2))

    def to_dict(self) -> dict:
        return {"family": "matern", **{k: getattr(self, k) for k in self.__dataclass_fields__}}


@dataclass(frozen=True)
class LMCParams:
    """``gamma(s) = A U(s)`` with independent latent Matérn fields ``U_k``."""

    A: tuple
    nus: tuple
    alphas: tuple
    scale: str = "range"

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != 2 or A.shape[1] not in (1, 2):
            raise ConfigurationError(f"A must be 2 x r with r in {{1, 2}}, got shape {A.shape}")
        if not np.all(np.isfinite(A)):
            raise ConfigurationError("A must be finite")
        r = A.shape[1]
        if np.linalg.matrix_rank(A) < r:
            raise ConfigurationError("A must have full column rank")
        nus = tuple(float(v) for v in self.nus)
        alphas = tuple(float(v) for v in self.alphas)
        if len(nus) != r or len(alphas) != r:
            raise ConfigurationError(f"need {r} latent smoothness and range values")
        if any(not (v > 0) for v in nus + alphas):
            raise ConfigurationError("latent smoothness and range must be positive")
        object.__setattr__(self, "A", tuple(tuple(row) for row in A.tolist()))
        object.__setattr__(self, "nus", nus)
        object.__setattr__(self, "alphas", alphas)

    @property
    def A_matrix(self) -> np.ndarray:
        return np.array(self.A)

    @property
    def rank(self) -> int:
        return len(self.nus)

    def to_dict(self) -> dict:
        return {"family": "lmc", "A": [list(r) for r in self.A], "nus": list(self.nus),
                "alphas": list(self.alphas), "scale": self.scale}


Params = Union[MaternParams, LMCParams]


@dataclass(frozen=True)
class CovarianceModel:
    params: Params
    nugget: tuple = (0.0, 0.0)

    def __post_init__(self):
        ng = tuple(float(v) for v in self.nugget)
        if len(ng) != 2 or any(not (v >= 0) for v in ng):
            raise ConfigurationError(f"nugget must be two nonnegative variances, got {self.nugget}")
        object.__setattr__(self, "nugget", ng)
        if not isinstance(self.params, (MaternParams, LMCParams)):
            raise ConfigurationError(f"unsupported covariance parameters {type(self.params).__name__}")

    @property
    def kind(self) -> str:
        return "matern" if isinstance(self.params, MaternParams) else "lmc"

    def to_dict(self) -> dict:
        return {**self.params.to_dict(), "nugget": list(self.nugget)}

    @classmethod
    def from_dict(cls, d: dict) -> "CovarianceModel":
        d = dict(d)
        family = d.pop("family", None)
        nugget = tuple(d.pop("nugget", (0.0, 0.0)))
        if family == "matern":
            params = MaternParams(**d)
        elif family == "lmc":
            params = LMCParams(**d)
        else:
            raise ConfigurationError(f"unknown covariance family {family!r}")
        return cls(params, nugget)


def cross_cov_lag(model: CovarianceModel, h) -> np.ndarray:
    """Cross-covariance blocks at lags ``h``: returns shape ``h.shape + (2, 2)`` (no nugget)."""
    h = np.asarray(h, dtype=float)
    p = model.params
    out = np.empty(h.shape + (2, 2))
    if isinstance(p, MaternParams):
        c11 = p.sigma2_1 * matern_corr(h, p.nu_1, p.alpha_1, p.scale)
        c22 = p.sigma2_2 * matern_corr(h, p.nu_2, p.alpha_2, p.scale)
        c12 = p.rho * math.sqrt(p.sigma2_1 * p.sigma2_2) * matern_corr(h, p.nu_cross, p.alpha_cross, p.scale)
        out[..., 0, 0], out[..., 1, 1] = c11, c22
        out[..., 0, 1] = out[..., 1, 0] = c12
    else:
        A = p.A_matrix
        out[...] = 0.0
        for k in range(p.rank):
            rk = np.asarray(matern_corr(h, p.nus[k], p.alphas[k], p.scale))
            out += rk[..., None, None] * np.outer(A[:, k], A[:, k])
    return out


def cross_cov(model: CovarianceModel, si, sj) -> np.ndarray:
    """2 x 2 cross-covariance between the field at ``si`` and at ``sj``."""
    h = float(np.linalg.norm(as_site(si) - as_site(sj)))
    return cross_cov_lag(model, h)


def cross_matrix(model: CovarianceModel, a, b) -> np.ndarray:
    """Stacked ``2 Na x 2 Nb`` covariance between two site sets, nugget excluded."""
    ca = a.coords if isinstance(a, SiteSet) else np.atleast_2d(a)
    cb = b.coords if isinstance(b, SiteSet) else np.atleast_2d(b)
    blocks = cross_cov_lag(model, cdist(ca, cb))
    return np.block([[blocks[..., 0, 0], blocks[..., 0, 1]],
                     [blocks[..., 1, 0], blocks[..., 1, 1]]])


def _symmetric_blocks(model: CovarianceModel, coords: np.ndarray) -> np.ndarray:
    n = coords.shape[0]
    condensed = cross_cov_lag(model, pdist(coords))
    at_zero = cross_cov_lag(model, 0.0)
    blocks = []
    for u in range(2):
        row = []
        for v in range(2):
            B = squareform(condensed[:, u, v], checks=False)
            B[np.diag_indices(n)] = at_zero[u, v]
            row.append(B)
        blocks.append(row)
    return np.block(blocks)


def assemble(model: CovarianceModel, sites: SiteSet) -> np.ndarray:
    """``2N x 2N`` covariance of ``Z_vec`` including the nugget on each diagonal block."""
    coords = sites.coords if isinstance(sites, SiteSet) else SiteSet(sites).coords
    C = _symmetric_blocks(model, coords)
    n = coords.shape[0]
    idx = np.arange(n)
    C[idx, idx] += model.nugget[0]
    C[n + idx, n + idx] += model.nugget[1]
    return C


def cholesky(C: np.ndarray, jitter: float = 1e-10, escalations: int = 3) -> np.ndarray:
    """Lower Cholesky factor, escalating a diagonal jitter on failure.

    The first retry adds ``jitter * mean(diag)``; each further retry multiplies
    the jitter by ten.  After ``escalations`` retries a :class:`NumericError`
    reports the index of the failing leading minor.
    """
    C = np.asarray(C, dtype=float)
    scale = float(np.mean(np.diag(C)))
    eps = 0.0
    info = 0
    for attempt in range(escalations + 1):
        M = C if eps == 0.0 else C + eps * np.eye(C.shape[0])
        L, info = linalg.lapack.dpotrf(M, lower=1, clean=1)
        if info == 0:
            return L
        if info < 0:
            raise NumericError(f"invalid argument {-info} to the Cholesky routine")
        eps = jitter * scale if attempt == 0 else eps * 10.0
    raise NumericError(
        f"covariance matrix not positive definite: leading minor {info} fails after "
        f"{escalations} jitter escalations", minor=int(info))
