"""Basis-embedded dense network for two outputs, and the independent per-variable baseline."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .basis import BasisConfig, embed
from .errors import ArgumentError, ConfigurationError
from .nn import (LayerSpec, LossWeights, Network, TrainConfig, dense_stack, forward,
                 dump_document, load_document, network_from_dict, network_to_dict, train)
from .spatial import BivariateObservations, SiteSet

log = logging.getLogger(__name__)

MODES = ("bivariate", "independent_univariate")


@dataclass(frozen=True)
class Architecture:
    """Hidden and output widths; the final width is the number of outputs (2)."""

    widths: tuple = (100, 100, 100, 100, 50, 2)
    regularized_layers: int = 2
    l1: float = 1e-6
    l2: float = 1e-6

    def __post_init__(self):
        w = tuple(int(v) for v in self.widths)
        if not w or any(v < 1 for v in w):
            raise ConfigurationError(f"widths must be positive, got {w}")
        object.__setattr__(self, "widths", w)

    @property
    def depth(self) -> int:
        return len(self.widths)

    def layers(self, input_dim: int, n_out: int | None = None) -> list[LayerSpec]:
        widths = self.widths if n_out is None else self.widths[:-1] + (n_out,)
        return dense_stack(input_dim, widths, self.regularized_layers, self.l1, self.l2)


PROFILES = {
    "simulation": {
        "basis": BasisConfig(resolutions=(25, 81, 81), bandwidth_factor=4.0),
        "arch": Architecture((100, 100, 100, 100, 50, 2), 2, 1e-6, 1e-6),
        "train": TrainConfig(learning_rate=0.003, epochs=400, patience=50, init="normal"),
    },
    "wind": {
        "basis": BasisConfig(resolutions=(100, 361, 1369), bandwidth_factor=4.0),
        "arch": Architecture((100, 100, 100, 100, 50, 50, 2), 2, 1e-6, 1e-6),
        "train": TrainConfig(learning_rate=0.003, epochs=400, patience=50, init="uniform"),
    },
}


def profile(name: str) -> dict:
    try:
        return dict(PROFILES[name])
    except KeyError:
        raise ConfigurationError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None


@dataclass
class CovariateStats:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def from_training(cls, cov: np.ndarray) -> "CovariateStats":
        mean = cov.mean(axis=0)
        sd = cov.std(axis=0)
        const = sd <= 1e-12 * np.maximum(1.0, np.abs(mean))
        # constant columns (the intercept) pass through unchanged
        return cls(np.where(const, 0.0, mean), np.where(const, 1.0, sd))

    def apply(self, cov: np.ndarray) -> np.ndarray:
        return (cov - self.mean) / self.scale


def _covariates(n: int, covariates) -> np.ndarray:
    if covariates is None:
        return np.ones((n, 1))
    cov = np.asarray(covariates, dtype=float)
    if cov.ndim == 1:
        cov = cov[:, None]
    if cov.shape[0] != n:
        raise ArgumentError(f"covariates have {cov.shape[0]} rows for {n} sites")
    if not np.all(np.isfinite(cov)):
        raise ArgumentError("covariates must be finite")
    return cov


def loss_weights_for(Z: np.ndarray) -> LossWeights:
    """Inverse sample variances of the targets; zero variance falls back to weight 1."""
    var = Z.var(axis=0, ddof=1) if Z.shape[0] > 1 else np.zeros(Z.shape[1])
    w = []
    for u, v in enumerate(var):
        if not (v > 0) or not np.isfinite(v):
            warnings.warn(f"target {u + 1} has zero sample variance; using loss weight 1.0", RuntimeWarning)
            w.append(1.0)
        else:
            w.append(1.0 / v)
    return LossWeights(tuple(w))


@dataclass
class DeepKrigingModel:
    basis: BasisConfig
    nets: list
    loss_weights: LossWeights
    covariate_stats: CovariateStats
    mode: str = "bivariate"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        expected = 1 if self.mode == "bivariate" else 2
        if len(self.nets) != expected:
            raise ConfigurationError(f"{self.mode} mode holds {expected} network(s), got {len(self.nets)}")
        n_in = self.basis.n_basis + self.n_covariates
        for net in self.nets:
            if net.input_dim != n_in:
                raise ConfigurationError(f"network input {net.input_dim} != basis + covariates {n_in}")
        outs = [net.output_dim for net in self.nets]
        if outs != ([2] if self.mode == "bivariate" else [1, 1]):
            raise ConfigurationError(f"output widths {outs} do not fit mode {self.mode}")

    @property
    def n_covariates(self) -> int:
        return int(self.covariate_stats.mean.shape[0])

    @property
    def net(self) -> Network:
        return self.nets[0]

    def features(self, sites, covariates=None) -> np.ndarray:
        sites = sites if isinstance(sites, SiteSet) else SiteSet(sites)
        cov = _covariates(len(sites), covariates)
        if cov.shape[1] != self.n_covariates:
            raise ArgumentError(f"model was trained with {self.n_covariates} covariate column(s), got {cov.shape[1]}")
        return embed(sites, self.basis, self.covariate_stats.apply(cov)).values

    def predict_features(self, X: np.ndarray) -> np.ndarray:
        if self.mode == "bivariate":
            return forward(self.net, X)
        return np.column_stack([forward(net, X)[:, 0] for net in self.nets])

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "basis": self.basis.to_dict(),
            "loss_weights": list(self.loss_weights.w),
            "covariate_mean": self.covariate_stats.mean.tolist(),
            "covariate_scale": self.covariate_stats.scale.tolist(),
            "nets": [network_to_dict(n) for n in self.nets],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DeepKrigingModel":
        return cls(
            basis=BasisConfig.from_dict(d["basis"]),
            nets=[network_from_dict(n) for n in d["nets"]],
            loss_weights=LossWeights(tuple(d["loss_weights"])),
            covariate_stats=CovariateStats(np.array(d["covariate_mean"], dtype=float),
                                           np.array(d["covariate_scale"], dtype=float)),
            mode=d["mode"],
        )

    def save(self, path):
        dump_document(path, "deepkriging", {"model": self.to_dict()})

    @classmethod
    def load(cls, path) -> "DeepKrigingModel":
        return cls.from_dict(load_document(path, "deepkriging")["model"])


def _layers_from(arch, input_dim: int, n_out: int | None) -> list[LayerSpec]:
    if isinstance(arch, Architecture):
        return arch.layers(input_dim, n_out)
    layers = list(arch)
    if layers[0].in_dim != input_dim:
        layers[0] = replace(layers[0], in_dim=input_dim)
    if n_out is not None and layers[-1].out_dim != n_out:
        layers[-1] = replace(layers[-1], out_dim=n_out)
    return layers


def fit(train_obs: BivariateObservations, covariates=None, basis: BasisConfig | None = None,
        arch: Architecture | Sequence[LayerSpec] | None = None, cfg: TrainConfig | None = None,
        mode: str = "bivariate") -> DeepKrigingModel:
    """Fit the network to the embedded training sites under inverse-variance loss weights."""
    basis = basis or PROFILES["simulation"]["basis"]
    arch = arch if arch is not None else PROFILES["simulation"]["arch"]
    cfg = cfg or PROFILES["simulation"]["train"]
    if mode not in MODES:
        raise ConfigurationError(f"unknown mode {mode!r}")
    cov = _covariates(len(train_obs), covariates)
    stats = CovariateStats.from_training(cov)
    X = embed(train_obs.sites, basis, stats.apply(cov)).values
    Z = train_obs.Z
    weights = loss_weights_for(Z)
    if mode == "bivariate":
        layers = _layers_from(arch, X.shape[1], None)
        if layers[-1].out_dim != 2:
            raise ConfigurationError("bivariate mode needs a final layer of width 2")
        net = Network.initialize(layers, np.random.default_rng(cfg.seed), cfg.init, cfg.init_scale, cfg.init_bounds)
        nets = [train(net, X, Z, weights, cfg)]
    else:
        nets = []
        for u in range(2):
            layers = _layers_from(arch, X.shape[1], 1)
            seed = np.random.SeedSequence([cfg.seed, u + 1])
            net = Network.initialize(layers, np.random.default_rng(seed), cfg.init, cfg.init_scale, cfg.init_bounds)
            sub_cfg = replace(cfg, seed=int(seed.generate_state(1)[0]))
            nets.append(train(net, X, Z[:, u], LossWeights((weights.w[u],)), sub_cfg))
    return DeepKrigingModel(basis, nets, weights, stats, mode)


def predict(model: DeepKrigingModel, sites, covariates=None) -> np.ndarray:
    """Predictions as an ``(n, 2)`` array, rows in site order."""
    return model.predict_features(model.features(sites, covariates))


@dataclass
class LMCEquivalenceReport:
    linear_max_abs: float
    linear_rmse: float
    relu_rmse: float | None
    n_basis: int
    n_sites: int

    @property
    def passed(self) -> bool:
        return self.linear_max_abs < 1e-3


def lmc_target(A: np.ndarray, phi: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """``A U(s)`` with each latent ``U_k`` a random combination of the shared basis columns."""
    W = rng.normal(size=(phi.shape[1], A.shape[1]))
    U = phi @ W
    return U @ A.T, W


def relu_embedding(lin: Network) -> Network:
    """Two-layer ReLU network computing exactly the affine map of a one-layer network.

    Uses ``h = relu(h) - relu(-h)``, so the ReLU family nests the linear one.
    """
    if len(lin.layers) != 1:
        raise ArgumentError("expected a one-layer network")
    W, b = lin.weights[0], lin.biases[0]
    k, d = W.shape
    layers = [LayerSpec(d, 2 * k, "relu"), LayerSpec(2 * k, k, "identity")]
    eye = np.eye(k)
    return Network(layers, [np.vstack([W, -W]), np.hstack([eye, -eye])], [np.concatenate([b, -b]), np.zeros(k)])


def lmc_equivalence_check(A, sites: SiteSet, basis: BasisConfig | None = None, seed: int = 0,
                          compare_relu: bool = False, relu_iters: int = 200) -> LMCEquivalenceReport:
    """Fit a one-layer identity network to a basis-expanded LMC field and measure the mismatch.

    With ``compare_relu`` the linear fit is embedded in a two-layer ReLU
    network which is then trained further on the same target; its error is
    reported alongside the linear one.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    basis = basis or BasisConfig(resolutions=(25,))
    rng = np.random.default_rng(seed)
    phi = embed(sites, basis).values
    target, _ = lmc_target(A, phi, rng)
    X = np.hstack([phi, np.ones((len(sites), 1))])
    lin = Network([LayerSpec(X.shape[1], 2, "identity")])
    lin = train(lin, X, target, None, TrainConfig(optimizer="lbfgs", epochs=20000, patience=0))
    resid = forward(lin, X) - target
    lin_rmse = float(np.sqrt(np.mean(resid**2)))
    relu_rmse = None
    if compare_relu:
        relu = train(relu_embedding(lin), X, target, None,
                     TrainConfig(optimizer="lbfgs", epochs=relu_iters, patience=0))
        relu_rmse = float(np.sqrt(np.mean((forward(relu, X) - target) ** 2)))
    return LMCEquivalenceReport(float(np.abs(resid).max()), lin_rmse, relu_rmse, basis.n_basis, len(sites))
