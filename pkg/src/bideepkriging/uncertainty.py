"""Bootstrap-ensemble prediction intervals with frozen lower layers.

Procedure: split the training data into halves D1 and D2, fit a base network
on a subset D11 of D1, retrain only the upper layers of copies of it on
bootstrap resamples of D1, estimate the residual variance on D2 from the
ensemble, and form per-variable t-intervals at new sites.
"""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from . import deepkriging as dk
from .basis import BasisConfig
from .errors import ArgumentError, ConfigurationError, TrainingDivergenceError
from .nn import Network, TrainConfig, forward, train
from .spatial import (BivariateObservations, SiteSet, SplitSpec, knn_many, split_indices,
                      write_rows)

log = logging.getLogger(__name__)

INTERVAL_HEADER = ("x", "y", "mean1", "lo1", "hi1", "mean2", "lo2", "hi2", "sigma_eps1", "sigma_eps2")


@dataclass
class EnsembleModel:
    base: dk.DeepKrigingModel
    members: list
    L0: int
    n_d1: int

    def __post_init__(self):
        if len(self.members) < 2:
            raise ConfigurationError("an ensemble needs at least two members")

    @property
    def B(self) -> int:
        return len(self.members)

    @property
    def n_trainable(self) -> int:
        return self.members[0].n_trainable()

    def df(self) -> int:
        """``|D1|`` minus the parameters retrained per member, clamped to at least 1."""
        df = self.n_d1 - self.n_trainable
        if df < 1:
            warnings.warn(f"degrees of freedom {df} < 1 (|D1|={self.n_d1}, retrained parameters="
                          f"{self.n_trainable}); clamping to 1", RuntimeWarning)
            return 1
        return df

    def member_predictions(self, sites, covariates=None) -> np.ndarray:
        """Shape ``(B, m, 2)``."""
        X = self.base.features(sites, covariates)
        H = _lower_activations(self.base.net, X, self.L0)
        return np.stack([forward(_head(m, self.L0), H) for m in self.members])

    def to_dict(self) -> dict:
        from .nn import network_to_dict
        return {"base": self.base.to_dict(), "L0": self.L0, "n_d1": self.n_d1,
                "members": [network_to_dict(m) for m in self.members]}

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleModel":
        from .nn import network_from_dict
        return cls(dk.DeepKrigingModel.from_dict(d["base"]),
                   [network_from_dict(m) for m in d["members"]], int(d["L0"]), int(d["n_d1"]))


def _lower_activations(net: Network, X: np.ndarray, L0: int) -> np.ndarray:
    a = X
    for l, W, b in zip(net.layers[:L0], net.weights[:L0], net.biases[:L0]):
        a = a @ W.T + b
        if l.activation == "relu":
            a = np.maximum(a, 0.0)
    return a


def _head(net: Network, L0: int) -> Network:
    return Network(net.layers[L0:], net.weights[L0:], net.biases[L0:])


def _member_task(args):
    base_net, H, Z, weights, cfg, L0, n, seed, attempt = args
    rng = np.random.default_rng(np.random.SeedSequence([seed, attempt]))
    idx = rng.integers(0, n, size=n)
    head = _head(base_net.with_frozen(0), L0)
    member_cfg = replace(cfg, seed=int(rng.integers(2**31)))
    head = train(head, H[idx], Z[idx], weights, member_cfg)
    frozen = base_net.with_frozen(L0)
    return Network(frozen.layers, frozen.weights[:L0] + head.weights, frozen.biases[:L0] + head.biases)


def fit_ensemble(D1: BivariateObservations, basis: BasisConfig | None = None, arch=None,
                 cfg: TrainConfig | None = None, B: int = 50, L0: int | None = None, seed: int = 0,
                 covariates=None, d11_fraction: float = 0.5, workers: int = 1) -> EnsembleModel:
    """Base network on D11, then ``B`` members retraining layers ``L0+1..L`` on resamples of D1.

    ``L0`` defaults to ``L - 1`` (only the output layer is retrained).  A
    member whose training diverges is retried once on a fresh resample.
    """
    basis = basis or dk.PROFILES["simulation"]["basis"]
    arch = arch if arch is not None else dk.PROFILES["simulation"]["arch"]
    cfg = cfg or dk.PROFILES["simulation"]["train"]
    if B < 2:
        raise ConfigurationError("B must be at least 2")
    n = len(D1)
    d11 = split_indices(n, SplitSpec(seed, [d11_fraction]))[0]
    cov = None if covariates is None else np.asarray(covariates, dtype=float)
    base = dk.fit(D1.take(d11), None if cov is None else cov[d11], basis, arch, replace(cfg, seed=seed))
    L = len(base.net.layers)
    L0 = L - 1 if L0 is None else L0
    if not (0 <= L0 < L):
        raise ConfigurationError(f"L0 must lie in [0, {L - 1}], got {L0}")
    X = base.features(D1.sites, cov)
    H = _lower_activations(base.net, X, L0)
    Z = D1.Z
    tasks = [(base.net, H, Z, base.loss_weights, cfg, L0, n, int(seed) * 100003 + j, 0) for j in range(B)]

    def run(task_list):
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as ex:
                return list(ex.map(_safe_member, task_list))
        return [_safe_member(t) for t in task_list]

    members = run(tasks)
    for j, m in enumerate(members):
        if m is None:
            log.warning("ensemble member %d diverged; retrying on a fresh resample", j)
            retry = _safe_member(tasks[j][:-1] + (1,))
            if retry is None:
                raise TrainingDivergenceError(f"ensemble member {j} diverged twice")
            members[j] = retry
    return EnsembleModel(base, members, L0, n)


def _safe_member(task):
    try:
        return _member_task(task)
    except TrainingDivergenceError:
        return None


def ensemble_mean_cov(preds: np.ndarray, centered: bool = True):
    """Mean ``(m, 2)`` and covariance ``(m, 2, 2)`` of member predictions ``(B, m, 2)``.

    The covariance is the sample covariance with divisor ``B - 1``;
    ``centered=False`` gives the raw second moment with the same divisor.
    """
    preds = np.asarray(preds, dtype=float)
    B = preds.shape[0]
    if B < 2:
        raise ArgumentError("need at least two members")
    mean = preds.mean(axis=0)
    dev = preds - mean if centered else preds
    cov = np.einsum("bmu,bmv->muv", dev, dev) / (B - 1)
    return mean, 0.5 * (cov + np.swapaxes(cov, 1, 2))


def ensemble_predict(ens: EnsembleModel, sites, covariates=None, centered: bool = True):
    return ensemble_mean_cov(ens.member_predictions(sites, covariates), centered)


@dataclass
class ResidualField:
    sites: SiteSet
    r2: np.ndarray          # (n, 2)

    def __post_init__(self):
        if np.any(self.r2 < 0):
            raise ArgumentError("squared residual excess must be nonnegative")


def residual_r2(Z: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """``max((Z - mean)^2 - Sigma_uu, 0)`` per site and variable."""
    var = np.diagonal(cov, axis1=1, axis2=2)
    return np.maximum((Z - mean) ** 2 - var, 0.0)


def residual_field(ens: EnsembleModel, D2: BivariateObservations, covariates=None) -> ResidualField:
    mean, cov = ensemble_predict(ens, D2.sites, covariates)
    return ResidualField(D2.sites, residual_r2(D2.Z, mean, cov))


def t_quantile(p: float, df: float) -> float:
    return float(stats.t.ppf(p, df))


@dataclass
class IntervalReport:
    sites: SiteSet
    mean: np.ndarray
    cov: np.ndarray
    sigma_eps2: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    df: int
    alpha: float

    def to_csv(self, path):
        m, lo, hi, se = self.mean, self.lower, self.upper, np.sqrt(self.sigma_eps2)
        write_rows(path, INTERVAL_HEADER,
                   [self.sites.x, self.sites.y, m[:, 0], lo[:, 0], hi[:, 0], m[:, 1], lo[:, 1], hi[:, 1],
                    se[:, 0], se[:, 1]])


def interval_bounds(mean, cov, sigma_eps2, alpha: float, df: int):
    """``mean_u +- t_{1-alpha/2, df} sqrt(Sigma_uu + sigma_eps_u^2)``."""
    if not (0.0 < alpha < 1.0):
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}")
    if df is None or df <= 0:
        raise ConfigurationError(f"degrees of freedom must be positive, got {df}")
    var = np.diagonal(cov, axis1=-2, axis2=-1)
    half = t_quantile(1.0 - alpha / 2.0, df) * np.sqrt(np.maximum(var + sigma_eps2, 0.0))
    return mean - half, mean + half


def local_residual_variance(resid: ResidualField, sites: SiteSet, G: int) -> np.ndarray:
    """Mean ``r^2`` over the ``G`` nearest residual sites, per query site and variable."""
    idx, _ = knn_many(sites.coords, resid.sites, G)
    return resid.r2[idx].mean(axis=1)


def interval(ens: EnsembleModel, resid: ResidualField, sites, G: int = 10, alpha: float = 0.05,
             df: int | None = None, covariates=None) -> IntervalReport:
    """Intervals at ``sites`` (a SiteSet or a single site)."""
    sites = sites if isinstance(sites, SiteSet) else SiteSet(np.atleast_2d(sites))
    if not (1 <= G <= len(resid.sites)):
        raise ArgumentError(f"G must lie in [1, {len(resid.sites)}], got {G}")
    df = ens.df() if df is None else df
    mean, cov = ensemble_predict(ens, sites, covariates)
    s2 = local_residual_variance(resid, sites, G)
    lo, hi = interval_bounds(mean, cov, s2, alpha, df)
    return IntervalReport(sites, mean, cov, s2, lo, hi, int(df), alpha)


@dataclass
class IntervalFit:
    ensemble: EnsembleModel
    residuals: ResidualField
    d1: np.ndarray
    d2: np.ndarray


def fit_intervals(train_obs: BivariateObservations, basis=None, arch=None, cfg=None, B: int = 50,
                  L0: int | None = None, seed: int = 0, d11_fraction: float = 0.5,
                  workers: int = 1) -> IntervalFit:
    """Split into equal halves D1, D2, fit the ensemble on D1 and the residual field on D2."""
    d1, d2 = split_indices(len(train_obs), SplitSpec(seed, [0.5, 0.5]))
    ens = fit_ensemble(train_obs.take(d1), basis, arch, cfg, B, L0, seed, None, d11_fraction, workers)
    return IntervalFit(ens, residual_field(ens, train_obs.take(d2)), d1, d2)
