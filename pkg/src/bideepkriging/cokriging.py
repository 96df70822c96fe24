"""Cokriging baseline: GLS mean, cokriging predictor and variance, Gaussian likelihood fits."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize, stats

from .covariance import (CovarianceModel, LMCParams, MaternParams, assemble, cholesky,
                         cross_cov_lag, cross_matrix)
from .errors import ArgumentError, ConfigurationError, FitError, NumericError, SingularityError
from .spatial import BivariateObservations, SiteSet

log = logging.getLogger(__name__)


def intercept_design(n: int) -> np.ndarray:
    """Block-diagonal ``2n x 2`` design with one intercept per variable."""
    X = np.zeros((2 * n, 2))
    X[:n, 0] = 1.0
    X[n:, 1] = 1.0
    return X


def block_design(X1: np.ndarray, X2: np.ndarray) -> np.ndarray:
    """Stack per-variable covariate matrices into the ``2n x (p1 + p2)`` block design."""
    X1, X2 = np.atleast_2d(X1), np.atleast_2d(X2)
    n, p1 = X1.shape
    p2 = X2.shape[1]
    X = np.zeros((2 * n, p1 + p2))
    X[:n, :p1] = X1
    X[n:, p1:] = X2
    return X


def _factor(C) -> np.ndarray:
    C = np.asarray(C, dtype=float)
    return cholesky(C)


def _check_rank(Lw: np.ndarray):
    """Raise if the whitened design ``L^-1 X`` is rank deficient, naming the first bad column."""
    _, R, piv = linalg.qr(Lw, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    tol = max(Lw.shape) * np.finfo(float).eps * (d[0] if d.size else 0.0)
    bad = np.flatnonzero(d <= tol)
    if bad.size:
        col = int(piv[bad[0]])
        raise SingularityError(f"design matrix is rank deficient: column {col} is linearly dependent", column=col)


def gls_beta(C, X, z_vec, L: np.ndarray | None = None) -> np.ndarray:
    """GLS coefficients ``(X' C^-1 X)^-1 X' C^-1 z`` via the Cholesky factor of ``C``."""
    X = np.asarray(X, dtype=float)
    z = np.asarray(z_vec, dtype=float).reshape(-1)
    if X.shape[0] != z.shape[0]:
        raise ArgumentError(f"design has {X.shape[0]} rows for {z.shape[0]} responses")
    L = _factor(C) if L is None else L
    Xw = linalg.solve_triangular(L, X, lower=True)
    zw = linalg.solve_triangular(L, z, lower=True)
    _check_rank(Xw)
    beta, *_ = linalg.lstsq(Xw, zw)
    return beta


@dataclass
class CokrigingModel:
    cov: CovarianceModel
    sites: SiteSet
    z_vec: np.ndarray
    X: np.ndarray
    L: np.ndarray
    beta_hat: np.ndarray
    weights: np.ndarray          # C^-1 (z - X beta)
    CiX: np.ndarray              # C^-1 X
    V: np.ndarray                # (X' C^-1 X)^-1

    @property
    def n(self) -> int:
        return len(self.sites)


def fit_cokriging(cov: CovarianceModel, obs: BivariateObservations, X=None, C=None) -> CokrigingModel:
    """Factor the training covariance once and cache everything prediction needs.

    ``C`` may be passed when the stacked covariance of ``obs.sites`` is
    already available.
    """
    n = len(obs)
    X = intercept_design(n) if X is None else np.asarray(X, dtype=float)
    if X.shape[0] != 2 * n:
        raise ArgumentError(f"design needs {2 * n} rows, got {X.shape[0]}")
    C = assemble(cov, obs.sites) if C is None else C
    L = _factor(C)
    z = obs.z_vec
    beta = gls_beta(None, X, z, L=L)
    r = z - X @ beta
    w = linalg.cho_solve((L, True), r)
    CiX = linalg.cho_solve((L, True), X)
    V = np.linalg.inv(X.T @ CiX)
    return CokrigingModel(cov, obs.sites, z, X, L, beta, w, CiX, 0.5 * (V + V.T))


def cokrige_predict(model: CokrigingModel, s0, X0=None, include_nugget: bool = False):
    """Cokriging means ``(m, 2)`` and 2x2 prediction covariances ``(m, 2, 2)``.

    ``X0`` is the ``(m, 2, p1 + p2)`` stack of per-site design rows; omitted,
    the intercept-only design is used.  The covariance is the universal
    kriging error variance of the latent field; ``include_nugget`` adds the
    nugget so the interval targets a new observation.
    """
    s0 = s0 if isinstance(s0, SiteSet) else SiteSet(np.atleast_2d(s0))
    m, n = len(s0), model.n
    p = model.X.shape[1]
    if X0 is None:
        if p != 2:
            raise ArgumentError("X0 is required when the model has covariates")
        X0 = np.broadcast_to(np.eye(2), (m, 2, 2))
    X0 = np.asarray(X0, dtype=float)
    if X0.shape != (m, 2, p):
        raise ArgumentError(f"X0 must have shape {(m, 2, p)}, got {X0.shape}")
    C0 = cross_matrix(model.cov, model.sites, s0)            # (2n, 2m)
    C0 = np.stack([C0[:, :m], C0[:, m:]], axis=-1)           # (2n, m, 2)
    mean = np.einsum("mup,p->mu", X0, model.beta_hat) + np.einsum("nmu,n->mu", C0, model.weights)
    flat = C0.reshape(2 * n, 2 * m)
    CiC0 = linalg.cho_solve((model.L, True), flat).reshape(2 * n, m, 2)
    C00 = cross_cov_lag(model.cov, 0.0)
    quad = np.einsum("nmu,nmv->muv", C0, CiC0)
    G = X0 - np.einsum("np,nmu->mup", model.X, CiC0)          # (m, 2, p)
    corr = np.einsum("mup,pq,mvq->muv", G, model.V, G)
    var = C00[None] - quad + corr
    var = 0.5 * (var + np.swapaxes(var, 1, 2))
    if include_nugget:
        var[:, 0, 0] += model.cov.nugget[0]
        var[:, 1, 1] += model.cov.nugget[1]
    return mean, var


def gaussian_intervals(mean: np.ndarray, var: np.ndarray, alpha: float = 0.05):
    """``mean +- z_{1 - alpha/2} sd`` per variable; returns ``(lo, hi)`` each ``(m, 2)``."""
    sd = np.sqrt(np.clip(np.diagonal(var, axis1=1, axis2=2), 0.0, None))
    q = stats.norm.ppf(1.0 - alpha / 2.0)
    return mean - q * sd, mean + q * sd


# --- likelihood ------------------------------------------------------------

def neg_log_likelihood(cov: CovarianceModel, obs: BivariateObservations, X=None, C=None) -> float:
    """Profile negative log-likelihood of ``Z_vec`` with ``beta`` at its GLS value.

    Returns ``inf`` when the covariance cannot be factored, so optimizers retreat.
    """
    n = len(obs)
    X = intercept_design(n) if X is None else np.asarray(X, dtype=float)
    try:
        C = assemble(cov, obs.sites) if C is None else C
        L = cholesky(C, escalations=0)
    except NumericError:
        return math.inf
    z = obs.z_vec
    Xw = linalg.solve_triangular(L, X, lower=True)
    zw = linalg.solve_triangular(L, z, lower=True)
    beta, *_ = linalg.lstsq(Xw, zw)
    rw = zw - Xw @ beta
    val = np.log(np.diag(L)).sum() + 0.5 * rw @ rw + n * math.log(2.0 * math.pi)
    return float(val) if np.isfinite(val) else math.inf


_NU_MAX = 4.0
_LOG_BOUND = 12.0


def _exp(v: float, lo: float = -_LOG_BOUND, hi: float = _LOG_BOUND) -> float:
    return math.exp(min(max(v, lo), hi))


@dataclass
class _Codec:
    """Maps between covariance models and unconstrained parameter vectors.

    Log for variances, ranges and smoothness; atanh for the correlation.
    """

    family: str
    fit_nugget: bool
    scale: str = "range"

    def encode(self, cov: CovarianceModel) -> np.ndarray:
        p = cov.params
        if self.family == "matern":
            v = [math.log(p.sigma2_1), math.log(p.sigma2_2), math.atanh(p.rho), math.log(p.nu_1),
                 math.log(p.nu_2), math.log(p.alpha_1), math.log(p.alpha_2)]
        else:
            A = p.A_matrix
            if A.shape != (2, 2):
                raise ConfigurationError("the LMC fit uses a 2 x 2 mixing matrix")
            v = list(A.ravel()) + [math.log(x) for x in p.nus] + [math.log(x) for x in p.alphas]
        if self.fit_nugget:
            v += [math.log(max(x, 1e-8)) for x in cov.nugget]
        return np.array(v)

    def decode(self, theta: np.ndarray, fixed_nugget=(0.0, 0.0)) -> CovarianceModel:
        t = list(theta)
        nu_hi = math.log(_NU_MAX)
        if self.family == "matern":
            params = MaternParams(
                sigma2_1=_exp(t[0]), sigma2_2=_exp(t[1]), rho=float(np.clip(math.tanh(t[2]), -0.999, 0.999)),
                nu_1=_exp(t[3], hi=nu_hi), nu_2=_exp(t[4], hi=nu_hi),
                alpha_1=_exp(t[5]), alpha_2=_exp(t[6]), scale=self.scale)
            k = 7
        else:
            A = np.array(t[:4]).reshape(2, 2)
            params = LMCParams(A=A, nus=(_exp(t[4], hi=nu_hi), _exp(t[5], hi=nu_hi)),
                               alphas=(_exp(t[6]), _exp(t[7])), scale=self.scale)
            k = 8
        nugget = (_exp(t[k]), _exp(t[k + 1])) if self.fit_nugget else fixed_nugget
        return CovarianceModel(params, nugget)


@dataclass
class MLEResult:
    model: CovarianceModel
    nll: float
    init_nll: float
    n_evals: int
    converged: bool
    n_invalid: int
    message: str = ""


def default_init(family: str, obs: BivariateObservations, fit_nugget: bool = True) -> CovarianceModel:
    """Moment-based starting point: sample variances and correlation, range a tenth of the extent."""
    Z = obs.Z
    v1, v2 = (float(np.var(Z[:, u])) or 1.0 for u in range(2))
    rho = float(np.clip(np.corrcoef(Z.T)[0, 1], -0.9, 0.9)) if len(obs) > 2 else 0.0
    xmin, xmax, ymin, ymax = obs.sites.bounds()
    rng_ = 0.1 * max(xmax - xmin, ymax - ymin, 1e-6)
    nug = (0.05 * v1, 0.05 * v2) if fit_nugget else (0.0, 0.0)
    if family == "matern":
        return CovarianceModel(MaternParams(0.95 * v1, 0.95 * v2, rho, 0.8, 0.8, rng_, rng_), nug)
    if family == "lmc":
        a11 = math.sqrt(0.95 * v1)
        a21 = rho * math.sqrt(0.95 * v2)
        a22 = math.sqrt(max(0.95 * v2 - a21**2, 1e-3 * v2))
        A = np.array([[a11, 0.1 * a11], [a21, a22]])
        return CovarianceModel(LMCParams(A=A, nus=(0.8, 0.8), alphas=(rng_, 2 * rng_)), nug)
    raise ConfigurationError(f"unknown family {family!r}")


def fit_mle(family: str, obs: BivariateObservations, X=None, init: CovarianceModel | None = None,
            budget: int = 2000, fit_nugget: bool = True, subsample: int | None = None,
            seed: int = 0) -> MLEResult:
    """Nelder-Mead search over transformed covariance parameters.

    ``subsample`` caps the number of sites entering the likelihood (drawn
    under ``seed``); iterates whose covariance cannot be factored are
    scored ``inf`` and skipped.
    """
    if family not in ("matern", "lmc"):
        raise ConfigurationError(f"unknown family {family!r}")
    if subsample is not None and subsample < len(obs):
        idx = np.sort(np.random.default_rng(seed).choice(len(obs), size=subsample, replace=False))
        if X is not None:
            X = np.asarray(X)
            n = len(obs)
            X = X[np.concatenate([idx, n + idx])]
        obs = obs.take(idx)
    init = init or default_init(family, obs, fit_nugget)
    if init.kind != family:
        raise ConfigurationError(f"init is a {init.kind} model, expected {family}")
    scale = init.params.scale
    codec = _Codec(family, fit_nugget, scale)
    counter = {"evals": 0, "invalid": 0}

    def objective(theta):
        counter["evals"] += 1
        try:
            cov = codec.decode(theta, init.nugget)
        except ConfigurationError:
            counter["invalid"] += 1
            return 1e300
        val = neg_log_likelihood(cov, obs, X)
        if not math.isfinite(val):
            counter["invalid"] += 1
            return 1e300
        return val

    theta0 = codec.encode(init)
    init_nll = objective(theta0)
    res = optimize.minimize(objective, theta0, method="Nelder-Mead",
                            options={"maxfev": budget, "xatol": 1e-4, "fatol": 1e-6, "adaptive": True})
    best_theta, best = (res.x, float(res.fun)) if res.fun <= init_nll else (theta0, init_nll)
    if best >= 1e300:
        raise FitError(f"no valid {family} iterate within a budget of {budget} evaluations")
    return MLEResult(codec.decode(best_theta, init.nugget), best, init_nll, counter["evals"],
                     bool(res.success), counter["invalid"], str(res.message))


# --- tiling for large N ----------------------------------------------------

@dataclass
class TiledCokriging:
    """Independent cokriging fits on a rectangular tiling of the domain."""

    bounds: tuple
    nx: int
    ny: int
    models: dict = field(default_factory=dict)

    def tile_of(self, coords: np.ndarray) -> np.ndarray:
        xmin, xmax, ymin, ymax = self.bounds
        ix = np.clip(((coords[:, 0] - xmin) / (xmax - xmin) * self.nx).astype(int), 0, self.nx - 1)
        iy = np.clip(((coords[:, 1] - ymin) / (ymax - ymin) * self.ny).astype(int), 0, self.ny - 1)
        return ix * self.ny + iy

    def centers(self) -> np.ndarray:
        xmin, xmax, ymin, ymax = self.bounds
        cx = xmin + (np.arange(self.nx) + 0.5) * (xmax - xmin) / self.nx
        cy = ymin + (np.arange(self.ny) + 0.5) * (ymax - ymin) / self.ny
        gx, gy = np.meshgrid(cx, cy, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel()])


def fit_tiled(obs: BivariateObservations, nx: int, ny: int, cov: CovarianceModel | None = None,
              family: str = "matern", budget: int = 500, min_sites: int = 10) -> TiledCokriging:
    """Fit every tile holding at least ``min_sites`` sites, by MLE unless ``cov`` is given."""
    tiled = TiledCokriging(obs.sites.bounds(), nx, ny)
    tiles = tiled.tile_of(obs.sites.coords)
    for t in np.unique(tiles):
        idx = np.flatnonzero(tiles == t)
        if idx.size < min_sites:
            continue
        sub = obs.take(idx)
        model = cov if cov is not None else fit_mle(family, sub, budget=budget).model
        tiled.models[int(t)] = fit_cokriging(model, sub)
    if not tiled.models:
        raise FitError("no tile holds enough sites to fit")
    return tiled


def predict_tiled(tiled: TiledCokriging, s0: SiteSet, include_nugget: bool = False):
    """Predict each site with the model of its tile, or of the nearest fitted tile."""
    coords = s0.coords
    owner = tiled.tile_of(coords)
    fitted = np.array(sorted(tiled.models))
    centers = tiled.centers()[fitted]
    for i, t in enumerate(owner):
        if t not in tiled.models:
            owner[i] = fitted[np.argmin(((centers - coords[i]) ** 2).sum(axis=1))]
    mean = np.empty((len(s0), 2))
    var = np.empty((len(s0), 2, 2))
    for t in np.unique(owner):
        idx = np.flatnonzero(owner == t)
        mean[idx], var[idx] = cokrige_predict(tiled.models[int(t)], s0.take(idx), include_nugget=include_nugget)
    return mean, var
