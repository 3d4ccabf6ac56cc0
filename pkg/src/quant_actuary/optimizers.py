"""Seeded classical optimizers with per-iteration traces.

SPSA is the default for shot-sampled objectives; Nelder-Mead (SciPy's
implementation, wrapped to record a trace) for exact objectives.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from .errors import NumericalError, UsageError
from .sim import make_rng

__all__ = [
    "TraceRecord",
    "OptimizationTrace",
    "SPSAConfig",
    "NelderMeadConfig",
    "minimize_spsa",
    "minimize_nelder_mead",
    "minimize",
    "initial_params",
    "start_trace",
]

Objective = Callable[[np.ndarray], float]


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    params: np.ndarray
    value: float
    best: float


@dataclass
class OptimizationTrace:
    """``initial`` is iterate 0; ``records`` hold iterations 1..N."""

    initial: TraceRecord
    records: list[TraceRecord] = field(default_factory=list)
    status: str = "running"
    best_params: np.ndarray | None = None

    def __post_init__(self):
        if self.best_params is None:
            self.best_params = self.initial.params.copy()

    def __len__(self):
        return len(self.records)

    @property
    def best_value(self) -> float:
        return self.records[-1].best if self.records else self.initial.best

    @property
    def final(self) -> TraceRecord:
        return self.records[-1] if self.records else self.initial

    def all_records(self) -> list[TraceRecord]:
        return [self.initial, *self.records]

    def push(self, params, value: float) -> TraceRecord:
        prev = self.best_value
        if value < prev:
            self.best_params = np.array(params, dtype=float)
        rec = TraceRecord(len(self.records) + 1, np.array(params, dtype=float), float(value), min(prev, float(value)))
        self.records.append(rec)
        return rec

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "objective", "best", "parameters"])
            for r in self.all_records():
                w.writerow([r.iteration, repr(r.value), repr(r.best), " ".join(repr(float(p)) for p in r.params)])


def _checked(objective: Objective, trace_holder: list) -> Objective:
    def f(theta):
        v = float(objective(np.asarray(theta, dtype=float)))
        if not math.isfinite(v):
            err = NumericalError(f"objective returned {v!r} at {np.asarray(theta).tolist()}")
            err.trace = trace_holder[0] if trace_holder else None
            if err.trace is not None:
                err.trace.status = "aborted: non-finite objective"
            raise err
        return v

    return f


def start_trace(f: Objective, theta0) -> OptimizationTrace:
    """Trace holding only iterate 0 (``f`` evaluated at ``theta0``)."""
    theta0 = np.asarray(theta0, dtype=float).ravel().copy()
    v0 = f(theta0)
    return OptimizationTrace(TraceRecord(0, theta0, v0, v0))


@dataclass(frozen=True)
class SPSAConfig:
    iterations: int = 200
    a: float = 0.2
    c: float = 0.1
    A: float = 10.0
    alpha: float = 0.602
    gamma: float = 0.101
    seed: int = 0


def minimize_spsa(objective: Objective, theta0, config: SPSAConfig = SPSAConfig()) -> OptimizationTrace:
    """Simultaneous-perturbation stochastic approximation with Rademacher steps.

    Each iteration spends two objective calls on the gradient estimate and one
    on the new iterate, which is what the trace records.
    """
    if config.iterations < 1:
        raise UsageError(f"iterations must be >= 1, got {config.iterations}")
    if config.c <= 0:
        raise UsageError(f"perturbation scale c must be > 0, got {config.c}")
    holder: list = []
    f = _checked(objective, holder)
    trace = start_trace(f, theta0)
    holder.append(trace)
    rng = make_rng(config.seed)
    theta = trace.initial.params.copy()
    for k in range(config.iterations):
        ak = config.a / (k + 1 + config.A) ** config.alpha
        ck = config.c / (k + 1) ** config.gamma
        delta = rng.choice([-1.0, 1.0], size=theta.size)
        g = (f(theta + ck * delta) - f(theta - ck * delta)) / (2.0 * ck) * delta
        theta = theta - ak * g
        trace.push(theta, f(theta))
    trace.status = "max iterations"
    return trace


@dataclass(frozen=True)
class NelderMeadConfig:
    iterations: int = 2000
    simplex_scale: float = 0.1
    xatol: float = 1e-8
    fatol: float = 1e-12
    adaptive: bool = True


def minimize_nelder_mead(objective: Objective, theta0, config: NelderMeadConfig = NelderMeadConfig()) -> OptimizationTrace:
    if config.iterations < 1:
        raise UsageError(f"iterations must be >= 1, got {config.iterations}")
    holder: list = []
    f = _checked(objective, holder)
    trace = start_trace(f, theta0)
    holder.append(trace)
    x0 = trace.initial.params
    simplex = np.vstack([x0, x0 + config.simplex_scale * np.eye(x0.size)])

    def callback(intermediate_result):
        trace.push(intermediate_result.x, intermediate_result.fun)

    res = optimize.minimize(
        f,
        x0,
        method="Nelder-Mead",
        callback=callback,
        options={
            "maxiter": config.iterations,
            "maxfev": 50 * config.iterations * max(1, x0.size),
            "xatol": config.xatol,
            "fatol": config.fatol,
            "adaptive": config.adaptive,
            "initial_simplex": simplex,
        },
    )
    trace.status = "converged" if res.success else str(res.message)
    return trace


def minimize(objective: Objective, theta0, config) -> OptimizationTrace:
    """Dispatch on the config type; ``iterations == 0`` only evaluates the start point."""
    if getattr(config, "iterations", None) == 0:
        trace = start_trace(_checked(objective, []), theta0)
        trace.status = "no iterations"
        return trace
    if isinstance(config, SPSAConfig):
        return minimize_spsa(objective, theta0, config)
    if isinstance(config, NelderMeadConfig):
        return minimize_nelder_mead(objective, theta0, config)
    raise UsageError(f"unknown optimizer config {type(config).__name__}")


def initial_params(count: int, seed, low: float = -0.1, high: float = 0.1) -> np.ndarray:
    return make_rng(seed).uniform(low, high, size=count)
