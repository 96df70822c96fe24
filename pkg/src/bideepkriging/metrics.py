"""Prediction-quality metrics and the runtime-scaling benchmark."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ArgumentError


def _pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ArgumentError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.shape[0] == 0:
        raise ArgumentError("empty input")
    return a, b


def rmspe(truth, pred) -> np.ndarray:
    """Root mean squared prediction error per column (scalar for 1-d input)."""
    t, p = _pair(truth, pred)
    return np.sqrt(np.mean((t - p) ** 2, axis=0))


def picp_mpiw(truth, lower, upper) -> tuple[np.ndarray, np.ndarray]:
    """Coverage fraction (endpoints inclusive) and mean width per column."""
    t, lo = _pair(truth, lower)
    _, hi = _pair(truth, upper)
    if np.any(lo > hi):
        raise ArgumentError("interval lower bound exceeds upper bound")
    covered = (t >= lo) & (t <= hi)
    return covered.mean(axis=0), (hi - lo).mean(axis=0)


def _floats(v) -> list:
    return [float(x) for x in np.atleast_1d(v)]


@dataclass
class EvalReport:
    """Per-variable metrics of one method on one test set."""

    method: str
    rmspe: np.ndarray
    picp: np.ndarray | None = None
    mpiw: np.ndarray | None = None
    n_test: int = 0
    wall_times: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {"method": self.method, "n_test": self.n_test, "rmspe": _floats(self.rmspe)}
        if self.wall_times:
            d["wall_times"] = {k: float(v) for k, v in self.wall_times.items()}
        if self.picp is not None:
            d["picp"] = _floats(self.picp)
            d["mpiw"] = _floats(self.mpiw)
        return d


def evaluate(method: str, truth, pred, lower=None, upper=None) -> EvalReport:
    r = rmspe(truth, pred)
    n = int(np.shape(truth)[0])
    if lower is None:
        return EvalReport(method, r, n_test=n)
    picp, mpiw = picp_mpiw(truth, lower, upper)
    return EvalReport(method, r, picp, mpiw, n_test=n)


def loglog_slope(sizes, times) -> float:
    """Least-squares slope of ``log t`` against ``log N``."""
    x = np.log(np.asarray(sizes, dtype=float))
    y = np.log(np.asarray(times, dtype=float))
    if x.size < 2:
        raise ArgumentError("need at least two sizes")
    return float(np.polyfit(x, y, 1)[0])


@dataclass
class BenchResult:
    sizes: list
    times: dict = field(default_factory=dict)       # method -> median seconds per size, None if skipped
    censored: dict = field(default_factory=dict)    # method -> per-size flag: hit the timeout
    workers: int = 1

    def slope(self, method: str) -> float:
        pairs = [(n, t) for n, t in zip(self.sizes, self.times[method]) if t is not None]
        return loglog_slope([n for n, _ in pairs], [t for _, t in pairs])

    def to_dict(self) -> dict:
        return {"sizes": list(self.sizes), "workers": self.workers,
                "times": {k: [None if t is None else float(t) for t in v] for k, v in self.times.items()},
                "censored": {k: list(v) for k, v in self.censored.items()},
                "slopes": {k: self.slope(k) for k in self.times}}

    def rows(self) -> list[tuple]:
        return [(m, n, t, c) for m in self.times
                for n, t, c in zip(self.sizes, self.times[m], self.censored[m])]


def time_call(fn: Callable[[], object], repeats: int = 3, warmup: bool = True,
              clock: Callable[[], float] = time.perf_counter) -> float:
    """Median wall time of ``fn`` over ``repeats`` runs after one discarded warm-up run."""
    if warmup:
        fn()
    runs = []
    for _ in range(repeats):
        t0 = clock()
        fn()
        runs.append(clock() - t0)
    return float(np.median(runs))


def bench_scaling(methods: dict, sizes: Sequence[int], repeats: int = 3, timeout: float | None = None,
                  workers: int = 1, clock: Callable[[], float] = time.perf_counter) -> BenchResult:
    """Time ``methods[name](N)`` (a factory returning a zero-argument callable) at each size.

    One warm-up run per method is discarded at the smallest size.  A size
    whose median exceeds ``timeout`` seconds is flagged as censored and the
    larger sizes of that method are skipped.
    """
    sizes = [int(n) for n in sizes]
    if sizes != sorted(sizes):
        raise ArgumentError("sizes must be ascending")
    out = BenchResult(sizes, workers=workers)
    for name, make in methods.items():
        times, flags, stop = [], [], False
        for i, n in enumerate(sizes):
            if stop:
                times.append(None)
                flags.append(False)
                continue
            t = time_call(make(n), repeats, warmup=(i == 0), clock=clock)
            times.append(t)
            flags.append(timeout is not None and t > timeout)
            stop = flags[-1]
        out.times[name] = times
        out.censored[name] = flags
    return out


def bench_data(n_train: int, n_test: int = 100, seed: int = 0):
    """Gaussian-profile field at ``n_train + n_test`` uniform sites, split into train and test."""
    from .simulate import ScenarioConfig, generate
    obs = generate(ScenarioConfig(random_sites=n_train + n_test, seed=seed))[0]
    return obs.take(np.arange(n_train)), obs.take(np.arange(n_train, n_train + n_test))


def cokriging_workload(mle_evals: int = 20, n_test: int = 100, seed: int = 0):
    """Factory: MLE of the flexible Matern under a fixed likelihood-evaluation budget, then cokriging."""
    from .cokriging import cokrige_predict, fit_cokriging, fit_mle

    def make(n):
        train, test = bench_data(n, n_test, seed)

        def run():
            res = fit_mle("matern", train, budget=mle_evals, fit_nugget=True)
            return cokrige_predict(fit_cokriging(res.model, train), test.sites)
        return run
    return make


def deepkriging_workload(profile_name: str = "simulation", n_test: int = 100, seed: int = 0):
    """Factory: DeepKriging fit under a named profile, then prediction."""
    from . import deepkriging as dk
    prof = dk.profile(profile_name)

    def make(n):
        train, test = bench_data(n, n_test, seed)

        def run():
            model = dk.fit(train, None, prof["basis"], prof["arch"], prof["train"])
            return dk.predict(model, test.sites)
        return run
    return make
