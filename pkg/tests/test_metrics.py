import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bideepkriging.errors import ArgumentError
from bideepkriging.metrics import (BenchResult, bench_data, bench_scaling, evaluate, loglog_slope,
                                   picp_mpiw, rmspe, time_call)


def test_rmspe_examples():
    assert rmspe([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0
    assert rmspe([0.0, 0.0], [3.0, 4.0]) == pytest.approx(np.sqrt(12.5))
    np.testing.assert_allclose(rmspe([[0, 0], [0, 0]], [[1, 2], [1, 2]]), [1.0, 2.0])


def test_picp_mpiw_examples():
    truth = np.array([0.0, 1.0, 2.0, 3.0])
    picp, mpiw = picp_mpiw(truth, truth - 1, truth + 1)
    assert picp == 1.0 and mpiw == 2.0
    picp, mpiw = picp_mpiw(truth, [0.0, 0.0, 0.0, 0.0], [1.0, 1.0, 1.0, 1.0])
    assert picp == 0.5 and mpiw == 1.0


def test_picp_endpoints_inclusive():
    picp, _ = picp_mpiw([1.0, 2.0], [1.0, 0.0], [3.0, 2.0])
    assert picp == 1.0


def test_input_checks():
    with pytest.raises(ArgumentError):
        rmspe([1.0, 2.0], [1.0])
    with pytest.raises(ArgumentError):
        rmspe([], [])
    with pytest.raises(ArgumentError):
        picp_mpiw([0.0], [1.0], [0.0])


@given(seed=st.integers(0, 10**6), n=st.integers(1, 40))
@settings(max_examples=50, deadline=None)
def test_metrics_permutation_invariant(seed, n):
    rng = np.random.default_rng(seed)
    t, p = rng.normal(size=(n, 2)), rng.normal(size=(n, 2))
    lo = p - rng.uniform(0, 2, size=(n, 2))
    hi = p + rng.uniform(0, 2, size=(n, 2))
    perm = rng.permutation(n)
    np.testing.assert_allclose(rmspe(t[perm], p[perm]), rmspe(t, p), rtol=1e-12)
    a, b = picp_mpiw(t, lo, hi), picp_mpiw(t[perm], lo[perm], hi[perm])
    np.testing.assert_allclose(a[0], b[0])
    np.testing.assert_allclose(a[1], b[1], rtol=1e-12)


@given(seed=st.integers(0, 10**6), widen=st.floats(0, 3))
@settings(max_examples=50, deadline=None)
def test_picp_monotone_under_widening(seed, widen):
    rng = np.random.default_rng(seed)
    t = rng.normal(size=30)
    lo, hi = -np.abs(rng.normal(size=30)), np.abs(rng.normal(size=30))
    p0, w0 = picp_mpiw(t, lo, hi)
    p1, w1 = picp_mpiw(t, lo - widen, hi + widen)
    assert p1 >= p0 and w1 == pytest.approx(w0 + 2 * widen)


def test_evaluate_report():
    rep = evaluate("m", np.zeros((4, 2)), np.ones((4, 2)), -np.ones((4, 2)), 2 * np.ones((4, 2)))
    d = rep.to_dict()
    assert d == {"method": "m", "n_test": 4, "rmspe": [1.0, 1.0], "picp": [1.0, 1.0], "mpiw": [3.0, 3.0]}
    assert "picp" not in evaluate("m", np.zeros(3), np.zeros(3)).to_dict()


def test_loglog_slope_oracle():
    sizes = [100, 200, 400, 800]
    assert loglog_slope(sizes, [2e-6 * n**3 for n in sizes]) == pytest.approx(3.0)
    assert loglog_slope(sizes, [5.0 * n for n in sizes]) == pytest.approx(1.0)
    with pytest.raises(ArgumentError):
        loglog_slope([10], [1.0])


def test_time_call_uses_median_and_warmup():
    ticks = iter([0.0, 1.0, 10.0, 13.0, 20.0, 22.0])
    calls = []
    t = time_call(lambda: calls.append(1), repeats=3, warmup=True, clock=lambda: next(ticks))
    assert t == 2.0 and len(calls) == 4


def test_bench_scaling_with_fake_workloads():
    fake_times = {"cubic": lambda n: (n / 100) ** 3, "linear": lambda n: n / 100}
    clock = {"t": 0.0}

    def factory(name):
        def make(n):
            def run():
                clock["t"] += fake_times[name](n)
            return run
        return make

    res = bench_scaling({"cubic": factory("cubic"), "linear": factory("linear")}, [100, 200, 400, 800],
                        repeats=2, timeout=100.0, clock=lambda: clock["t"])
    assert res.times["linear"] == pytest.approx([1, 2, 4, 8])
    assert res.slope("linear") == pytest.approx(1.0)
    assert res.times["cubic"][:3] == pytest.approx([1, 8, 64])
    assert res.censored["cubic"] == [False, False, False, True]
    assert res.slope("cubic") == pytest.approx(3.0)
    d = res.to_dict()
    assert set(d["slopes"]) == {"cubic", "linear"}
    assert len(res.rows()) == 8


def test_bench_censoring_skips_larger_sizes():
    calls = []

    def make(n):
        def run():
            calls.append(n)
        return run

    res = bench_scaling({"m": make}, [1, 2, 3], repeats=1, timeout=-1.0)
    assert res.censored["m"] == [True, False, False]
    assert res.times["m"][1:] == [None, None]
    assert set(calls) == {1}


def test_bench_sizes_ascending():
    with pytest.raises(ArgumentError):
        bench_scaling({}, [400, 200])


def test_bench_data_split():
    train, test = bench_data(50, 10, seed=1)
    assert len(train) == 50 and len(test) == 10
    a, _ = bench_data(50, 10, seed=1)
    np.testing.assert_array_equal(a.Z, train.Z)


def test_bench_result_slope_skips_missing():
    res = BenchResult([10, 20, 40], {"m": [1.0, 4.0, None]}, {"m": [False, True, False]})
    assert res.slope("m") == pytest.approx(2.0)


def test_rmspe_constant_residual_and_manual_recomputation():
    t = np.arange(6.0)
    assert rmspe(t, t + 2.0) == pytest.approx(2.0)
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=10), rng.normal(size=10)
    total = 0.0
    for x, y in zip(a, b):
        total += (x - y) * (x - y)
    assert rmspe(a, b) == pytest.approx((total / 10) ** 0.5, rel=1e-14)


def test_picp_none_inside_and_constant_width():
    t = np.array([5.0, 6.0, 7.0])
    picp, mpiw = picp_mpiw(t, np.zeros(3), np.full(3, 0.5))
    assert picp == 0.0 and mpiw == pytest.approx(0.5)


def test_network_epoch_time_roughly_linear_in_n():
    from bideepkriging import deepkriging as dk
    from bideepkriging.basis import embed
    from bideepkriging.nn import Network, TrainConfig, train

    prof = dk.profile("simulation")
    sizes = [500, 1000, 2000, 4000]
    rng = np.random.default_rng(0)
    times = []
    for n in sizes:
        X = embed(rng.uniform(size=(n, 2)), prof["basis"]).values
        Y = rng.normal(size=(n, 2))
        net = Network.initialize(prof["arch"].layers(X.shape[1]), rng)
        cfg = TrainConfig(epochs=2, patience=0, val_fraction=0.0)
        times.append(time_call(lambda: train(net, X, Y, None, cfg), repeats=3))
    assert abs(loglog_slope(sizes, times) - 1.0) <= 0.4
