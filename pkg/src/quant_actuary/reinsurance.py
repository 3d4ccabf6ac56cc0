"""Reinsurance type allocation as a constrained variational problem.

Asset ``j`` is assigned to the private market when bit ``j`` is 1.  The
portfolio variance ``x^T V x`` becomes the diagonal cost Hamiltonian
``sum_jk v_jk (I - Z_j)/2 (I - Z_k)/2``; the allocation-count constraint is
enforced by an ansatz built only from Hamming-weight preserving RBS gates,
and by discarding shots of the wrong weight.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CapacityError, UsageError
from .noise import (
    CalibrationMatrix,
    NoiseModel,
    calibrate,
    distribution_mean,
    mitigate,
    noisy_sample,
    postselect_weight,
)
from .optimizers import NelderMeadConfig, OptimizationTrace, SPSAConfig, initial_params, minimize
from .sim import Circuit, Observable, bitstring, derive_seed, index_of, make_rng, run, sample

__all__ = [
    "CovarianceInstance",
    "AnsatzSpec",
    "ShotMode",
    "AllocationResult",
    "generate_covariance",
    "make_instance",
    "cost_observable",
    "build_allocation_ansatz",
    "evaluate_variance",
    "estimate_variance",
    "brute_force_allocation",
    "optimize_allocation",
    "weight_leakage",
    "variance_table",
    "EXACT_OPTIMIZER",
    "SHOT_OPTIMIZER",
]

BRUTE_FORCE_CAP = 1_000_000

EXACT_OPTIMIZER = NelderMeadConfig(iterations=3000, simplex_scale=0.1)
SHOT_OPTIMIZER = SPSAConfig(iterations=100, a=0.3, c=0.15)


@dataclass(frozen=True)
class CovarianceInstance:
    V: np.ndarray
    k: int
    seed: int | None = None

    def __post_init__(self):
        V = np.asarray(self.V, dtype=float)
        object.__setattr__(self, "V", V)
        if V.ndim != 2 or V.shape[0] != V.shape[1] or V.shape[0] < 2:
            raise UsageError(f"V must be square with n >= 2, got shape {V.shape}")
        if np.max(np.abs(V - V.T)) > 1e-12:
            raise UsageError("V is not symmetric")
        if np.min(np.linalg.eigvalsh(V)) < -1e-10:
            raise UsageError("V is not positive semidefinite")
        if not 1 <= self.k <= self.n - 1:
            raise UsageError(f"target weight k={self.k} must lie in [1, {self.n - 1}]")

    @property
    def n(self) -> int:
        return self.V.shape[0]

    @property
    def p(self) -> float:
        return self.k / self.n

    def variance(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(x @ self.V @ x)


def generate_covariance(n: int, seed: int) -> np.ndarray:
    """``A A^T / n`` with ``A`` an ``n x n`` standard normal draw."""
    if n < 2:
        raise UsageError(f"n must be >= 2, got {n}")
    A = make_rng(seed).standard_normal((n, n))
    V = A @ A.T / n
    return (V + V.T) / 2


def make_instance(n: int, seed: int, p: float = 0.5) -> CovarianceInstance:
    if not 0 < p < 1:
        raise UsageError(f"p must lie in (0, 1), got {p}")
    return CovarianceInstance(generate_covariance(n, seed), round(p * n), seed)


def cost_observable(V) -> Observable:
    V = np.asarray(V, dtype=float)
    obs = Observable()
    n = V.shape[0]
    for j in range(n):
        for k in range(n):
            v = V[j, k] / 4.0
            obs.add(v)
            obs.add(-v, {j})
            obs.add(-v, {k})
            obs.add(v, {j} ^ {k})  # Z_j Z_j = I
    return obs.simplify()


@dataclass(frozen=True)
class AnsatzSpec:
    """RBS ansatz layout: a k-gate initialization ladder and ``layers`` brick layers."""

    n: int
    k: int
    layers: int = 3
    connectivity: str = "brick"

    def __post_init__(self):
        if not 1 <= self.k <= self.n - 1:
            raise UsageError(f"k={self.k} must lie in [1, {self.n - 1}]")
        if self.layers < 0:
            raise UsageError("layers must be >= 0")
        if self.connectivity != "brick":
            raise UsageError(f"unsupported connectivity {self.connectivity!r}")

    def init_pairs(self) -> list[tuple[int, int]]:
        n, k = self.n, self.k
        return [(k - 1 - i, k + i % (n - k)) for i in range(k)]

    def layer_pairs(self) -> list[tuple[int, int]]:
        even = [(a, a + 1) for a in range(0, self.n - 1, 2)]
        odd = [(a, a + 1) for a in range(1, self.n - 1, 2)]
        return even + odd

    @property
    def parameter_count(self) -> int:
        return self.k + self.layers * len(self.layer_pairs())


def build_allocation_ansatz(spec: AnsatzSpec, params) -> Circuit:
    params = np.asarray(params, dtype=float).ravel()
    if params.size != spec.parameter_count:
        raise UsageError(f"expected {spec.parameter_count} parameters, got {params.size}")
    circ = Circuit(spec.n)
    for q in range(spec.k):
        circ.x(q)
    pairs = spec.init_pairs() + spec.layer_pairs() * spec.layers
    for (a, b), theta in zip(pairs, params):
        circ.rbs(a, b, float(theta))
    return circ


def weight_leakage(state, k: int) -> float:
    """Largest amplitude magnitude outside the weight-``k`` subspace."""
    n = state.n_qubits
    w = np.bitwise_count(np.arange(1 << n))
    amps = np.abs(state.amplitudes[w != k])
    return float(amps.max()) if amps.size else 0.0


@dataclass(frozen=True)
class ShotMode:
    shots: int
    seed: int
    noise: NoiseModel | None = None
    mitigation: bool = False
    postselect: bool = True
    calibration_shots: int = 100_000


def variance_table(instance: CovarianceInstance) -> np.ndarray:
    """Classical ``x^T V x`` for every basis index (independent of the Hamiltonian path)."""
    n = instance.n
    idx = np.arange(1 << n)
    bits = ((idx[:, None] >> np.arange(n)) & 1).astype(float)
    return np.einsum("ij,jk,ik->i", bits, instance.V, bits)


def evaluate_variance(params, instance: CovarianceInstance, spec: AnsatzSpec | None = None, mode="exact", calibration=None) -> float:
    """Variance objective at ``params``; see :func:`estimate_variance` for shot details."""
    return estimate_variance(params, instance, spec, mode, calibration)[0]


def estimate_variance(params, instance, spec=None, mode="exact", calibration=None, cost_diagonal=None):
    """Return ``(variance, retained_fraction)``.

    Exact mode is ``<psi|H_cost|psi>``.  Shot mode averages ``x^T V x`` over
    the sampled bitstrings, after optional readout mitigation and weight
    postselection (in that order: mitigation needs the full distribution).
    """
    spec = spec or AnsatzSpec(instance.n, instance.k)
    circ = build_allocation_ansatz(spec, params)
    if cost_diagonal is None:
        cost_diagonal = cost_observable(instance.V).diagonal(instance.n)
    if mode == "exact":
        return float(np.dot(run(circ).probabilities(), cost_diagonal)), 1.0
    if not isinstance(mode, ShotMode):
        raise UsageError(f"mode must be 'exact' or a ShotMode, got {mode!r}")
    if mode.noise is None:
        dist = sample(run(circ), mode.shots, mode.seed)
    else:
        dist = noisy_sample(circ, mode.noise, mode.shots, mode.seed)
    if mode.mitigation:
        if calibration is None:
            calibration = (
                CalibrationMatrix.identity(instance.n)
                if mode.noise is None
                else calibrate(mode.noise, instance.n, mode.calibration_shots, derive_seed(mode.seed, 99))
            )
        dist = mitigate(dist, calibration)
    retained = 1.0
    if mode.postselect:
        dist, retained = postselect_weight(dist, instance.k)
    return distribution_mean(dist, lambda b: cost_diagonal[index_of(b)]), retained


def brute_force_allocation(instance: CovarianceInstance, rtol: float = 1e-12):
    """Exhaustive minimum of ``x^T V x`` over weight-k allocations and all minimizers."""
    n, k = instance.n, instance.k
    if math.comb(n, k) > BRUTE_FORCE_CAP:
        raise CapacityError(f"C({n},{k}) = {math.comb(n, k)} exceeds {BRUTE_FORCE_CAP}")
    values = {}
    for ones in itertools.combinations(range(n), k):
        x = np.zeros(n)
        x[list(ones)] = 1
        values["".join("1" if j in ones else "0" for j in range(n))] = instance.variance(x)
    best = min(values.values())
    tol = rtol * max(1.0, abs(best))
    return best, sorted(b for b, v in values.items() if v - best <= tol)


@dataclass
class AllocationResult:
    trace: OptimizationTrace
    best_params: np.ndarray
    final_params: np.ndarray
    best_bitstring: str
    target: float
    quantum_quantum: list[float] = field(default_factory=list)
    quantum_classical: list[float] = field(default_factory=list)
    retained_fraction: list[float] = field(default_factory=list)

    @property
    def gap(self) -> float:
        """Relative gap of the final noiseless objective to the brute-force minimum."""
        return (self.quantum_classical[-1] - self.target) / abs(self.target)

    def rows(self):
        for i, (qq, qc, rf) in enumerate(zip(self.quantum_quantum, self.quantum_classical, self.retained_fraction)):
            yield i, qq, qc, self.target, rf


def _mode_bitstring(dist: dict, k: int) -> str:
    kept = {b: w for b, w in dist.items() if b.count("1") == k}
    top = max(kept.values())
    return min(b for b, w in kept.items() if w == top)


def optimize_allocation(
    instance: CovarianceInstance,
    spec: AnsatzSpec | None = None,
    optimizer=None,
    mode="exact",
    init_seed: int = 0,
    theta0=None,
) -> AllocationResult:
    """Run the variational loop and record both the executed and the noiseless curve."""
    spec = spec or AnsatzSpec(instance.n, instance.k)
    if optimizer is None:
        optimizer = EXACT_OPTIMIZER if mode == "exact" else SHOT_OPTIMIZER
    if theta0 is None:
        theta0 = initial_params(spec.parameter_count, init_seed)
    diag = cost_observable(instance.V).diagonal(instance.n)
    cal = None
    if isinstance(mode, ShotMode) and mode.mitigation:
        cal = (
            CalibrationMatrix.identity(instance.n)
            if mode.noise is None
            else calibrate(mode.noise, instance.n, mode.calibration_shots, derive_seed(mode.seed, 99))
        )
    retained: dict[bytes, float] = {}

    if mode == "exact":
        def objective(theta):
            return estimate_variance(theta, instance, spec, "exact", cost_diagonal=diag)[0]
    else:
        counter = itertools.count()

        def objective(theta):
            m = replace(mode, seed=derive_seed(mode.seed, next(counter)))
            value, rf = estimate_variance(theta, instance, spec, m, cal, diag)
            retained[np.asarray(theta, dtype=float).tobytes()] = rf
            return value

    trace = minimize(objective, theta0, optimizer)
    target, _ = brute_force_allocation(instance)
    records = trace.all_records()
    qq = [r.value for r in records]
    qc = [estimate_variance(r.params, instance, spec, "exact", cost_diagonal=diag)[0] for r in records]
    rf_series = [retained.get(r.params.tobytes(), 1.0 if mode == "exact" else float("nan")) for r in records]

    final = trace.final.params
    state = run(build_allocation_ansatz(spec, final))
    if mode == "exact":
        p = state.probabilities()
        dist = {bitstring(i, instance.n): float(p[i]) for i in np.flatnonzero(p > 1e-15)}
    else:
        seed = derive_seed(mode.seed, 10**9)
        circ = build_allocation_ansatz(spec, final)
        dist = sample(state, mode.shots, seed) if mode.noise is None else noisy_sample(circ, mode.noise, mode.shots, seed)
    return AllocationResult(
        trace=trace,
        best_params=trace.best_params,
        final_params=final,
        best_bitstring=_mode_bitstring(dist, instance.k),
        target=target,
        quantum_quantum=qq,
        quantum_classical=qc,
        retained_fraction=rf_series,
    )
