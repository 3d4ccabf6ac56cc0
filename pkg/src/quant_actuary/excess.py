"""Quantum excess evaluation and its classical reference values.

The loss is lognormal, truncated to ``[0, x_max]`` and discretized onto
``2**n`` grid points.  The circuit prepares ``sum_j sqrt(p_j)|j>``, subtracts
the threshold index with a borrow ancilla, and rotates a measurement qubit by
an angle proportional to the excess.  The payment follows from the
probability of reading ``1`` on that qubit through a first-order expansion.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .errors import NumericalError, UsageError
from .noise import CalibrationMatrix, NoiseModel, calibrate, mitigate, noisy_sample
from .sim import Circuit, amplitude_encode, derive_seed, probability_of, run, sample

__all__ = [
    "LognormalSpec",
    "ExcessContract",
    "DiscretizedLoss",
    "ExcessResult",
    "ShotMode",
    "lognormal_pdf",
    "payment_theory",
    "payment_truncated",
    "discretize",
    "build_subtractor",
    "build_excess_circuit",
    "estimate_payment",
    "bias_bound",
    "MAX_C",
]

# small-angle guard on the rotation per integer step
MAX_C = 0.1


@dataclass(frozen=True)
class LognormalSpec:
    mu: float = 0.0
    sigma: float = 1.0
    x_max: float = 10.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise UsageError(f"sigma must be positive, got {self.sigma}")
        if not self.x_max > 1:
            raise UsageError(f"x_max must exceed 1, got {self.x_max}")


@dataclass(frozen=True)
class ExcessContract:
    """Retention ``M(x) = 0`` up to ``threshold``, then ``slope*(x - threshold) + threshold``."""

    threshold: float = 1.0
    slope: float = 0.6

    @property
    def payment_factor(self) -> float:
        return 1.0 - self.slope

    def retention(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x <= self.threshold, 0.0, self.slope * (x - self.threshold) + self.threshold)

    def payment(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x > self.threshold, self.payment_factor * (x - self.threshold), 0.0)


def lognormal_pdf(x, spec: LognormalSpec = LognormalSpec()):
    """Lognormal density; 0 at ``x = 0`` by continuity."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0):
        raise UsageError("lognormal density is undefined for negative x")
    out = np.zeros_like(xa)
    pos = xa > 0
    xp = xa[pos]
    out[pos] = np.exp(-((np.log(xp) - spec.mu) ** 2) / (2 * spec.sigma**2)) / (xp * spec.sigma * math.sqrt(2 * math.pi))
    return out if out.ndim else float(out)


def payment_theory(spec: LognormalSpec = LognormalSpec(), contract: ExcessContract = ExcessContract()) -> float:
    """Untruncated expected payment from the lognormal partial expectation."""
    t = contract.threshold
    if t <= 0:
        partial, tail = math.exp(spec.mu + spec.sigma**2 / 2), 1.0
    else:
        lt = math.log(t)
        partial = math.exp(spec.mu + spec.sigma**2 / 2) * special.ndtr((spec.mu + spec.sigma**2 - lt) / spec.sigma)
        tail = special.ndtr((spec.mu - lt) / spec.sigma)
    return float(contract.payment_factor * (partial - t * tail))


def _quad(fn, a, b):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, _ = integrate.quad(fn, a, b, epsabs=1e-13, epsrel=1e-12, limit=500)
        except integrate.IntegrationWarning as exc:
            raise NumericalError(f"quadrature on [{a}, {b}] did not converge: {exc}") from exc
    return val


def payment_truncated(spec: LognormalSpec = LognormalSpec(), contract: ExcessContract = ExcessContract()) -> float:
    """Expected payment under the density renormalized on ``[0, x_max]``."""
    if spec.x_max <= contract.threshold:
        return 0.0
    pdf = lambda x: lognormal_pdf(x, spec)
    # split at the mode so quad sees the peak
    mode = min(math.exp(spec.mu - spec.sigma**2), spec.x_max)
    mass = _quad(pdf, 0.0, mode) + _quad(pdf, mode, spec.x_max)
    integrand = lambda x: pdf(x) * float(contract.payment(x))
    return _quad(integrand, contract.threshold, spec.x_max) / mass


@dataclass(frozen=True)
class DiscretizedLoss:
    n: int
    grid: np.ndarray
    probabilities: np.ndarray
    threshold_index: int
    unit: float

    @property
    def size(self) -> int:
        return 1 << self.n

    def excess_steps(self) -> np.ndarray:
        """``max(j - threshold_index, 0)`` per grid point."""
        return np.maximum(np.arange(self.size) - self.threshold_index, 0)

    def exact_payment(self, payment_factor: float = 0.4) -> float:
        """Discrete payment ``factor * unit * sum_{j >= t} p_j (j - t)``."""
        return float(payment_factor * self.unit * np.dot(self.probabilities, self.excess_steps()))


def discretize(spec: LognormalSpec = LognormalSpec(), contract: ExcessContract = ExcessContract(), n: int = 4) -> DiscretizedLoss:
    if not 2 <= n <= 14:
        raise UsageError(f"n must be in [2, 14], got {n}")
    size = 1 << n
    grid = spec.x_max * np.arange(size) / (size - 1)
    dens = lognormal_pdf(grid, spec)
    p = dens / dens.sum()
    # round half up, then keep the threshold strictly inside the grid
    t = math.floor((size - 1) / spec.x_max * contract.threshold + 0.5)
    t = min(max(t, 1), size - 1)
    return DiscretizedLoss(n, grid, p, t, spec.x_max / (size - 1))


def build_subtractor(n: int, k: int) -> Circuit:
    """``|x>|0>_a -> |x - k mod 2**n>|x < k>_a`` on data qubits ``0..n-1`` and ancilla ``n``.

    Subtracting ``k`` from the n-bit value equals adding ``2**(n+1) - k`` to
    the (n+1)-bit register whose top bit is the ancilla; the top bit of the sum
    is then the borrow.  The constant is added one set bit at a time with
    multi-controlled-X incrementers.
    """
    if n < 1:
        raise UsageError(f"n must be >= 1, got {n}")
    if not 0 <= k < (1 << n):
        raise UsageError(f"constant {k} outside [0, {1 << n})")
    width = n + 1
    addend = ((1 << width) - k) % (1 << width)
    circ = Circuit(width)
    for i in range(width):
        if not (addend >> i) & 1:
            continue
        # increment the sub-register i..n
        for j in range(n, i, -1):
            circ.mcx(tuple(range(i, j)), j)
        circ.x(i)
    return circ


def build_excess_circuit(dist: DiscretizedLoss, c: float) -> Circuit:
    """Full excess circuit on ``n + 2`` qubits (data, borrow ancilla, measurement)."""
    if not 0 < c <= MAX_C:
        raise UsageError(f"c must lie in (0, {MAX_C}], got {c}")
    n = dist.n
    q_a, q_m = n, n + 1
    circ = Circuit(n + 2)
    circ.compose(amplitude_encode(np.sqrt(dist.probabilities)), range(n))
    circ.compose(build_subtractor(n, dist.threshold_index), range(n + 1))
    circ.x(q_a)
    circ.ry(q_m, math.pi / 2)
    for i in range(n):
        # RY(phi) turns the amplitude angle by phi/2, so the register value x
        # advances the measurement angle by c*x
        circ.ccry(q_a, i, q_m, 2.0 * (1 << i) * c)
    return circ


def bias_bound(dist: DiscretizedLoss, c: float, payment_factor: float = 0.4) -> float:
    """Second-order remainder bound ``factor * unit * c * sum_j p_j (j - t)^2``."""
    m = dist.excess_steps()
    return float(payment_factor * dist.unit * c * np.dot(dist.probabilities, m * m))


@dataclass(frozen=True)
class ShotMode:
    shots: int
    seed: int
    noise: NoiseModel | None = None
    mitigation: bool = False
    calibration_shots: int = 100_000


@dataclass(frozen=True)
class ExcessResult:
    P0: float
    R_estimate: float
    c: float
    mode: str
    shots: int | None = None
    seed: int | None = None
    std_error: float | None = None


def estimate_payment(
    dist: DiscretizedLoss,
    contract: ExcessContract = ExcessContract(),
    c: float = 0.02,
    mode: str | ShotMode = "exact",
) -> ExcessResult:
    """Estimate the payment from the measurement-qubit probability ``P0 = P(q_m = 1)``."""
    circ = build_excess_circuit(dist, c)
    q_m = dist.n + 1
    scale = contract.payment_factor * dist.unit / c
    if mode == "exact":
        P0 = probability_of(run(circ), q_m, 1)
        # all angles stay in [pi/4, 3pi/4] here, so P0 >= 1/2 must hold
        if c * (dist.size - 1 - dist.threshold_index) <= math.pi / 2 and P0 < 0.5 - 1e-12:
            raise NumericalError(f"P0 = {P0!r} below 1/2 although every rotation is non-negative")
        return ExcessResult(P0, (P0 - 0.5) * scale, c, "exact")
    if not isinstance(mode, ShotMode):
        raise UsageError(f"mode must be 'exact' or a ShotMode, got {mode!r}")
    noise = mode.noise
    if noise is None:
        counts = sample(run(circ), mode.shots, mode.seed)
    else:
        counts = noisy_sample(circ, noise, mode.shots, mode.seed)
    ones = sum(v for b, v in counts.items() if b[q_m] == "1")
    marginal = {"0": mode.shots - ones, "1": ones}
    if mode.mitigation:
        if noise is None:
            cal = CalibrationMatrix.identity(1)
        else:
            cal = calibrate(noise, 1, mode.calibration_shots, derive_seed(mode.seed, 7))
        P0 = mitigate(marginal, cal).get("1", 0.0)
    else:
        P0 = ones / mode.shots
    se = math.sqrt(max(P0 * (1 - P0), 0.0) / mode.shots) * abs(scale)
    return ExcessResult(P0, (P0 - 0.5) * scale, c, "shots", mode.shots, mode.seed, se)
