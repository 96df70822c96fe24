"""Validated JSON run configurations for the command-line workflows.

Every model forbids unknown keys.  Paths are resolved relative to the
directory of the config file.
"""
from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import deepkriging as dk
from .basis import BasisConfig
from .covariance import CovarianceModel
from .nn import TrainConfig
from .simulate import GAUSSIAN_PROFILE, TUKEY_PROFILE, ScenarioConfig, TukeyGH


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class TukeySpec(Strict):
    g: float
    h: float = Field(ge=0)


class ScenarioSpec(Strict):
    kind: Literal["gaussian", "tukey_gh", "nonstationary"] = "gaussian"
    grid: tuple[int, int] = (40, 30)
    random_sites: Optional[int] = Field(default=None, ge=1)
    replicates: int = Field(default=1, ge=1)
    tukey: Optional[tuple[TukeySpec, TukeySpec]] = None
    residual_variance: float = Field(default=0.01, ge=0)
    covariance: Optional[dict] = None

    @model_validator(mode="after")
    def _fill_tukey(self):
        if self.kind == "tukey_gh" and self.tukey is None:
            object.__setattr__(self, "tukey", tuple(TukeySpec(g=t.g, h=t.h) for t in TUKEY_PROFILE))
        if self.kind != "tukey_gh" and self.tukey is not None:
            raise ValueError("tukey is only valid for kind 'tukey_gh'")
        if self.covariance is None:
            object.__setattr__(self, "covariance", GAUSSIAN_PROFILE.to_dict())
        return self

    def build(self, seed: int) -> ScenarioConfig:
        return ScenarioConfig(
            kind=self.kind, grid=tuple(self.grid), random_sites=self.random_sites,
            model=CovarianceModel.from_dict(self.covariance),
            tukey=None if self.tukey is None else tuple(TukeyGH(t.g, t.h) for t in self.tukey),
            residual_variance=self.residual_variance, seed=seed, replicates=self.replicates)


class SplitOptions(Strict):
    test_fraction: Optional[float] = Field(default=None, gt=0, lt=1)


class SimulateConfig(Strict):
    seed: int = 0
    scenario: ScenarioSpec = ScenarioSpec()
    split: SplitOptions = SplitOptions()


class BasisSpec(Strict):
    resolutions: tuple[int, ...] = (25, 81, 81)
    domain_bounds: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)
    bandwidth_rule: Literal["overlap", "literal"] = "overlap"
    bandwidth_factor: float = Field(default=4.0, gt=0)
    thetas: Optional[tuple[float, ...]] = None
    knots: Optional[tuple[tuple[tuple[float, float], ...], ...]] = None

    def build(self) -> BasisConfig:
        return BasisConfig(**self.model_dump())


class ArchSpec(Strict):
    widths: tuple[int, ...] = (100, 100, 100, 100, 50, 2)
    regularized_layers: int = Field(default=2, ge=0)
    l1: float = Field(default=1e-6, ge=0)
    l2: float = Field(default=1e-6, ge=0)

    def build(self) -> dk.Architecture:
        return dk.Architecture(**self.model_dump())


class TrainSpec(Strict):
    learning_rate: Optional[float] = Field(default=None, gt=0)
    batch_size: Optional[int] = Field(default=None, ge=1)
    epochs: Optional[int] = Field(default=None, ge=0)
    optimizer: Optional[Literal["adam", "sgd", "lbfgs"]] = None
    patience: Optional[int] = Field(default=None, ge=0)
    min_delta: Optional[float] = Field(default=None, ge=0)
    val_fraction: Optional[float] = Field(default=None, ge=0, lt=1)
    init: Optional[Literal["normal", "uniform"]] = None

    def build(self, base: TrainConfig, seed: int) -> TrainConfig:
        from dataclasses import replace
        overrides = {k: v for k, v in self.model_dump().items() if v is not None}
        return replace(base, seed=seed, **overrides)


class NetworkSpec(Strict):
    """Profile defaults, each section optionally overridden."""

    profile: Literal["simulation", "wind"] = "simulation"
    basis: Optional[BasisSpec] = None
    arch: Optional[ArchSpec] = None
    train: TrainSpec = TrainSpec()

    def resolve(self, seed: int):
        prof = dk.profile(self.profile)
        basis = self.basis.build() if self.basis is not None else prof["basis"]
        arch = self.arch.build() if self.arch is not None else prof["arch"]
        return basis, arch, self.train.build(prof["train"], seed)


class DeepKrigingSpec(NetworkSpec):
    mode: Literal["bivariate", "independent_univariate"] = "bivariate"


class CokrigingSpec(Strict):
    family: Literal["matern", "lmc"] = "matern"
    budget: int = Field(default=2000, ge=1)
    subsample: Optional[int] = Field(default=None, ge=10)
    fit_nugget: bool = True
    covariance: Optional[dict] = None


class FitConfig(Strict):
    seed: int = 0
    data: str
    method: Literal["deepkriging", "cokriging"] = "deepkriging"
    deepkriging: DeepKrigingSpec = DeepKrigingSpec()
    cokriging: CokrigingSpec = CokrigingSpec()


class PredictConfig(Strict):
    seed: int = 0
    model: str
    sites: str
    basis: Optional[BasisSpec] = None
    include_nugget: bool = False


class EnsembleSpec(NetworkSpec):
    B: int = Field(default=50, ge=2)
    L0: Optional[int] = Field(default=None, ge=0)
    G: int = Field(default=10, ge=1)
    alpha: float = Field(default=0.05, gt=0, lt=1)
    d11_fraction: float = Field(default=0.5, gt=0, le=1)


class IntervalConfig(Strict):
    seed: int = 0
    data: str
    sites: str
    ensemble: EnsembleSpec = EnsembleSpec()


class EvaluateConfig(Strict):
    seed: int = 0
    truth: str
    predictions: Optional[str] = None
    intervals: Optional[str] = None
    method: str = "model"

    @model_validator(mode="after")
    def _one_source(self):
        if (self.predictions is None) == (self.intervals is None):
            raise ValueError("give exactly one of predictions or intervals")
        return self


class BenchConfig(Strict):
    seed: int = 0
    sizes: tuple[int, ...] = (200, 400, 800, 1600)
    methods: tuple[Literal["cokriging", "deepkriging"], ...] = ("cokriging", "deepkriging")
    repeats: int = Field(default=3, ge=1)
    mle_evals: int = Field(default=20, ge=1)
    n_test: int = Field(default=100, ge=1)
    profile: Literal["simulation", "wind"] = "simulation"
    timeout: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _ascending(self):
        if list(self.sizes) != sorted(self.sizes) or not self.sizes:
            raise ValueError("sizes must be a nonempty ascending list")
        return self


CONFIGS = {
    "simulate": SimulateConfig,
    "fit": FitConfig,
    "predict": PredictConfig,
    "interval": IntervalConfig,
    "evaluate": EvaluateConfig,
    "bench": BenchConfig,
}


def schema() -> dict:
    return {name: model.model_json_schema() for name, model in CONFIGS.items()}
