"""Gate and readout noise, readout-error mitigation, Hamming-weight postselection.

Gate noise is simulated with Pauli trajectories: every shot carries its own
statevector, and after each gate each touched qubit suffers a uniformly
random X, Y or Z with the gate-class probability.  Shots are simulated as a
batch (one row per shot) in bounded-memory chunks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import AllShotsExcluded, CalibrationError, UsageError
from .sim import Circuit, Gate, _apply, _counts_from_array, bitstring, derive_seed, index_of, make_rng, run, sample

__all__ = [
    "NoiseModel",
    "CalibrationMatrix",
    "noisy_sample",
    "calibrate",
    "mitigate",
    "forward_readout",
    "postselect_weight",
    "clip_quasi",
    "distribution_mean",
]

SINGLE_QUBIT_FIDELITY = 0.997
TWO_QUBIT_FIDELITY = 0.963

# amplitudes held per trajectory chunk
_CHUNK_AMPLITUDES = 1 << 21

_PAULI = ("X", "Y", "Z")


@dataclass(frozen=True)
class NoiseModel:
    p1: float = 1.0 - SINGLE_QUBIT_FIDELITY
    p2: float = 1.0 - TWO_QUBIT_FIDELITY
    r01: float = 0.02
    r10: float = 0.02

    def __post_init__(self):
        for name in ("p1", "p2", "r01", "r10"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise UsageError(f"{name} must lie in [0, 1], got {v!r}")

    @classmethod
    def noiseless(cls) -> NoiseModel:
        return cls(0.0, 0.0, 0.0, 0.0)

    @property
    def has_gate_noise(self) -> bool:
        return self.p1 > 0.0 or self.p2 > 0.0

    @property
    def has_readout_noise(self) -> bool:
        return self.r01 > 0.0 or self.r10 > 0.0


def _readout_flip(indices: np.ndarray, n: int, model: NoiseModel, rng: np.random.Generator) -> np.ndarray:
    out = indices.copy()
    for q in range(n):
        bit = (indices >> q) & 1
        p = np.where(bit == 1, model.r10, model.r01)
        flip = rng.random(indices.size) < p
        out[flip] ^= 1 << q
    return out


def _trajectory_indices(circuit: Circuit, model: NoiseModel, shots: int, seed) -> np.ndarray:
    n = circuit.n_qubits
    dim = 1 << n
    chunk = max(1, _CHUNK_AMPLITUDES // dim)
    out = []
    for c, start in enumerate(range(0, shots, chunk)):
        m = min(chunk, shots - start)
        rng = make_rng(seed, 2, c)
        batch = np.zeros((m, dim), dtype=complex)
        batch[:, 0] = 1.0
        for g in circuit.gates:
            _apply(batch, n, g)
            p = model.p1 if g.n_touched == 1 else model.p2
            if p == 0.0:
                continue
            for q in g.qubits:
                hit = np.flatnonzero(rng.random(m) < p)
                if hit.size == 0:
                    continue
                which = rng.integers(0, 3, size=hit.size)
                for w, pauli in enumerate(_PAULI):
                    rows = hit[which == w]
                    if rows.size:
                        sub = np.ascontiguousarray(batch[rows])
                        _apply(sub, n, Gate(pauli, (q,)))
                        batch[rows] = sub
        probs = np.abs(batch) ** 2
        cdf = np.cumsum(probs, axis=1)
        u = rng.random(m) * cdf[:, -1]
        idx = (cdf <= u[:, None]).sum(axis=1)
        out.append(np.minimum(idx, dim - 1))
    return np.concatenate(out)


def noisy_sample(circuit: Circuit, model: NoiseModel, shots: int, seed) -> dict[str, int]:
    """Sample ``circuit`` from ``|0...0>`` under ``model``.

    Without gate noise the ideal state is sampled exactly as :func:`sample`
    does with the same seed, so a fully noiseless model reproduces its counts.
    """
    if shots < 1:
        raise UsageError(f"shots must be >= 1, got {shots}")
    n = circuit.n_qubits
    if not model.has_gate_noise:
        state = run(circuit)
        if not model.has_readout_noise:
            return sample(state, shots, seed)
        p = state.probabilities()
        counts = make_rng(seed).multinomial(shots, p / p.sum())
        indices = np.repeat(np.arange(1 << n), counts)
    else:
        indices = _trajectory_indices(circuit, model, shots, seed)
    if model.has_readout_noise:
        indices = _readout_flip(indices, n, model, make_rng(seed, 1))
    return _counts_from_array(np.bincount(indices, minlength=1 << n), n)


@dataclass
class CalibrationMatrix:
    """Per-qubit readout confusion ``matrices[q][measured, prepared]``."""

    matrices: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrices, dtype=float)
        if m.ndim != 3 or m.shape[1:] != (2, 2):
            raise UsageError(f"expected shape (n, 2, 2), got {m.shape}")
        if np.any(np.abs(m.sum(axis=1) - 1.0) > 1e-9):
            raise CalibrationError("calibration columns must sum to 1")
        for q, mq in enumerate(m):
            if not (mq[0, 0] > mq[1, 0] and mq[1, 1] > mq[0, 1]):
                raise CalibrationError(f"qubit {q}: flip rate >= 0.5, confusion matrix not invertible: {mq.tolist()}")
        self.matrices = m

    @property
    def n_qubits(self) -> int:
        return self.matrices.shape[0]

    @classmethod
    def identity(cls, n: int) -> CalibrationMatrix:
        return cls(np.tile(np.eye(2), (n, 1, 1)))

    @classmethod
    def from_model(cls, model: NoiseModel, n: int) -> CalibrationMatrix:
        m = np.array([[1.0 - model.r01, model.r10], [model.r01, 1.0 - model.r10]])
        return cls(np.tile(m, (n, 1, 1)))


def calibrate(model: NoiseModel, n_qubits: int, shots: int, seed) -> CalibrationMatrix:
    """Estimate per-qubit flip rates from all-zero and all-one preparations."""
    zero = Circuit(n_qubits)
    one = Circuit(n_qubits)
    for q in range(n_qubits):
        one.x(q)
    c0 = noisy_sample(zero, model, shots, derive_seed(seed, 0))
    c1 = noisy_sample(one, model, shots, derive_seed(seed, 1))
    mats = np.empty((n_qubits, 2, 2))
    for q in range(n_qubits):
        f01 = sum(c for b, c in c0.items() if b[q] == "1") / shots
        f10 = sum(c for b, c in c1.items() if b[q] == "0") / shots
        if f01 >= 0.5 or f10 >= 0.5:
            raise CalibrationError(f"qubit {q}: estimated flip rates ({f01:.3f}, {f10:.3f}) make calibration singular")
        mats[q] = [[1.0 - f01, f10], [f01, 1.0 - f10]]
    return CalibrationMatrix(mats)


def _to_vector(dist: Mapping[str, float], n: int) -> np.ndarray:
    vec = np.zeros(1 << n)
    for bits, w in dist.items():
        if len(bits) != n:
            raise UsageError(f"bitstring {bits!r} does not match register width {n}")
        vec[index_of(bits)] += w
    return vec


def _tensor_apply(vec: np.ndarray, mats: np.ndarray) -> np.ndarray:
    n = mats.shape[0]
    t = vec.reshape((2,) * n)
    for q in range(n):
        ax = n - 1 - q
        t = np.moveaxis(np.tensordot(mats[q], t, axes=([1], [ax])), 0, ax)
    return t.reshape(-1)


def forward_readout(probs: np.ndarray, cal: CalibrationMatrix) -> np.ndarray:
    """Push an exact probability vector through the readout confusion model."""
    return _tensor_apply(np.asarray(probs, dtype=float), cal.matrices)


def mitigate(counts: Mapping[str, float], cal: CalibrationMatrix) -> dict[str, float]:
    """Apply the per-qubit inverse confusion matrices to empirical frequencies.

    Entries of the result may be negative; they sum to one.
    """
    n = cal.n_qubits
    vec = _to_vector(counts, n)
    total = vec.sum()
    if total <= 0:
        raise UsageError("cannot mitigate an empty distribution")
    inv = np.linalg.inv(cal.matrices)
    quasi = _tensor_apply(vec / total, inv)
    return {bitstring(i, n): float(quasi[i]) for i in np.flatnonzero(quasi)}


def clip_quasi(quasi: Mapping[str, float]) -> dict[str, float]:
    """Nearest-looking probability view for display: negatives dropped, renormalized."""
    kept = {b: w for b, w in quasi.items() if w > 0}
    total = sum(kept.values())
    return {b: w / total for b, w in kept.items()}


def postselect_weight(counts: Mapping[str, float], k: int) -> tuple[dict[str, float], float]:
    """Keep only bitstrings of Hamming weight ``k``; also return the retained fraction."""
    if k < 0:
        raise UsageError(f"k must be >= 0, got {k}")
    kept = {b: w for b, w in counts.items() if b.count("1") == k}
    total = sum(counts.values())
    retained = sum(kept.values())
    if not kept or retained <= 0:
        raise AllShotsExcluded(f"no shots of Hamming weight {k}")
    return kept, float(retained / total)


def distribution_mean(dist: Mapping[str, float], values) -> float:
    """Weighted mean of ``values(bitstring)`` under counts or a quasi-distribution."""
    total = 0.0
    acc = 0.0
    for bits, w in dist.items():
        acc += w * values(bits)
        total += w
    if total == 0:
        raise AllShotsExcluded("distribution has zero total weight")
    return acc / total
