import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quant_actuary.errors import NumericalError, UsageError
from quant_actuary.optimizers import (
    NelderMeadConfig,
    SPSAConfig,
    initial_params,
    minimize,
    minimize_nelder_mead,
    minimize_spsa,
)


def sphere(theta):
    return float(np.sum(theta**2))


def rosenbrock(theta):
    x, y = theta
    return float((1 - x) ** 2 + 100 * (y - x * x) ** 2)


class TestSPSA:
    def test_quadratic(self):
        trace = minimize_spsa(sphere, [1.0, 1.0], SPSAConfig(iterations=500, seed=3))
        assert trace.best_value <= 1e-2
        assert len(trace) == 500

    def test_zero_iterations(self):
        with pytest.raises(UsageError):
            minimize_spsa(sphere, [1.0], SPSAConfig(iterations=0))

    def test_bad_perturbation(self):
        with pytest.raises(UsageError):
            minimize_spsa(sphere, [1.0], SPSAConfig(c=0.0))

    def test_deterministic(self):
        cfg = SPSAConfig(iterations=40, seed=17)
        a = minimize_spsa(sphere, [0.5, -0.3, 2.0], cfg)
        b = minimize_spsa(sphere, [0.5, -0.3, 2.0], cfg)
        assert [r.value for r in a.all_records()] == [r.value for r in b.all_records()]
        np.testing.assert_array_equal(a.best_params, b.best_params)

    def test_non_finite_aborts_with_trace(self):
        calls = iter(range(10**6))

        def flaky(theta):
            return math.nan if next(calls) >= 10 else sphere(theta)

        with pytest.raises(NumericalError) as info:
            minimize_spsa(flaky, [1.0, 1.0], SPSAConfig(iterations=50))
        assert info.value.trace is not None
        assert info.value.trace.status.startswith("aborted")
        assert 0 < len(info.value.trace) < 50


class TestNelderMead:
    def test_rosenbrock(self):
        trace = minimize_nelder_mead(rosenbrock, [-1.2, 1.0], NelderMeadConfig(iterations=2000))
        assert trace.best_value <= 1e-4
        assert len(trace) <= 2000
        np.testing.assert_allclose(trace.best_params, [1.0, 1.0], atol=1e-3)

    def test_already_optimal(self):
        trace = minimize_nelder_mead(sphere, [0.0, 0.0, 0.0], NelderMeadConfig(iterations=500))
        assert trace.best_value == 0.0
        assert trace.initial.value == 0.0

    def test_non_finite(self):
        with pytest.raises(NumericalError):
            minimize_nelder_mead(lambda t: math.inf, [1.0])


def test_dispatch_and_zero_iterations():
    trace = minimize(sphere, [2.0], NelderMeadConfig(iterations=0))
    assert len(trace) == 0
    assert trace.final.value == 4.0
    with pytest.raises(UsageError):
        minimize(sphere, [1.0], object())


def test_initial_params_range():
    p = initial_params(50, 7)
    assert p.shape == (50,)
    assert np.all((p >= -0.1) & (p <= 0.1))
    np.testing.assert_array_equal(p, initial_params(50, 7))


def test_trace_csv(tmp_path):
    trace = minimize_spsa(sphere, [1.0, 2.0], SPSAConfig(iterations=3))
    path = tmp_path / "trace.csv"
    trace.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,objective,best,parameters"
    assert len(lines) == 5
    assert lines[1].startswith("0,")


@settings(max_examples=30)
@given(
    st.lists(st.floats(-3, 3), min_size=1, max_size=5),
    st.integers(1, 60),
    st.sampled_from(["spsa", "nm"]),
    st.integers(0, 1000),
)
def test_best_so_far_monotone(theta0, iterations, kind, seed):
    rng = np.random.default_rng(seed)
    shift = rng.normal(size=len(theta0))

    def noisy(theta):
        return float(np.sum(np.cos(theta - shift)) + 0.1 * rng.normal())

    cfg = SPSAConfig(iterations=iterations, seed=seed) if kind == "spsa" else NelderMeadConfig(iterations=iterations)
    trace = minimize(noisy, theta0, cfg)
    best = [r.best for r in trace.all_records()]
    assert all(b2 <= b1 for b1, b2 in zip(best, best[1:]))
    assert len(trace) <= iterations
    for r in trace.all_records():
        assert r.best <= r.value
