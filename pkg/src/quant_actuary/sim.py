"""Exact statevector simulator.

Layout is little-endian: qubit ``q`` is bit ``q`` of the basis index, so the
register value is ``x = sum_q bit_q * 2**q``.  Bitstrings (the keys of counts
maps) are written with qubit 0 first, i.e. ``bitstring[q]`` is the outcome of
qubit ``q``.

Every kernel works on arrays of shape ``(..., 2**n)`` so the same code drives a
single state and a batch of trajectories (see :mod:`quant_actuary.noise`).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import CapacityError, UsageError, ValidationError

__all__ = [
    "MAX_QUBITS",
    "Gate",
    "Circuit",
    "Statevector",
    "Observable",
    "new_register",
    "apply_gate",
    "apply_ccry",
    "run",
    "gate_matrix",
    "lower_rbs",
    "amplitude_encode",
    "expectation",
    "probability_of",
    "sample",
    "make_rng",
    "derive_seed",
    "bitstring",
    "index_of",
    "dump_amplitudes_csv",
]

MAX_QUBITS = 24

# kind -> (number of qubits or None for variable, parameterized)
_KINDS = {
    "X": (1, False),
    "Y": (1, False),
    "Z": (1, False),
    "H": (1, False),
    "RY": (1, True),
    "CX": (2, False),
    "CZ": (2, False),
    "CRY": (2, True),
    "CCRY": (3, True),
    "RBS": (2, True),
    "MCX": (None, False),
    "MCRY": (None, True),
}

_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)
_H = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2.0)


def _ry(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2.0), math.sin(theta / 2.0)
    return np.array([[c, -s], [s, c]], dtype=complex)


@dataclass(frozen=True)
class Gate:
    """One gate: ``qubits`` lists control(s) first, then target(s).

    ``param`` is an optional slot into a flat parameter vector; a gate with a
    slot has its angle filled in by :meth:`Circuit.bind`.  ``ctrl_state``
    (MCX/MCRY only) gives the control value each control must hold; it
    defaults to all ones.
    """

    kind: str
    qubits: tuple[int, ...]
    theta: float | None = None
    param: int | None = None
    ctrl_state: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise UsageError(f"unknown gate kind {self.kind!r}")
        arity, parameterized = _KINDS[self.kind]
        qubits = tuple(int(q) for q in self.qubits)
        object.__setattr__(self, "qubits", qubits)
        if arity is not None and len(qubits) != arity:
            raise UsageError(f"{self.kind} acts on {arity} qubit(s), got {qubits}")
        if arity is None and len(qubits) < 1:
            raise UsageError(f"{self.kind} needs at least a target qubit")
        if len(set(qubits)) != len(qubits):
            raise UsageError(f"{self.kind} repeats a qubit: {qubits}")
        if any(q < 0 for q in qubits):
            raise UsageError(f"negative qubit index in {qubits}")
        if parameterized and self.theta is None and self.param is None:
            raise UsageError(f"{self.kind} needs an angle or a parameter slot")
        if not parameterized and (self.theta is not None or self.param is not None):
            raise UsageError(f"{self.kind} takes no angle")
        if self.ctrl_state is not None:
            if self.kind not in ("MCX", "MCRY"):
                raise UsageError("ctrl_state is only valid for MCX/MCRY")
            if len(self.ctrl_state) != len(qubits) - 1 or any(b not in (0, 1) for b in self.ctrl_state):
                raise UsageError(f"bad ctrl_state {self.ctrl_state} for controls {qubits[:-1]}")

    @property
    def n_touched(self) -> int:
        return len(self.qubits)

    def inverse(self) -> Gate:
        if self.theta is None:
            if self.param is not None:
                raise UsageError("bind parameters before inverting")
            return self
        return replace(self, theta=-self.theta)


@dataclass
class Circuit:
    """Ordered gate list on ``n_qubits`` wires."""

    n_qubits: int
    gates: list[Gate] = field(default_factory=list)

    def __post_init__(self):
        if self.n_qubits < 1:
            raise UsageError("a circuit needs at least one qubit")
        for g in self.gates:
            self._check(g)

    def _check(self, gate: Gate) -> None:
        if max(gate.qubits) >= self.n_qubits:
            raise UsageError(f"{gate.kind} on {gate.qubits} exceeds {self.n_qubits} qubits")

    def append(self, gate: Gate) -> Circuit:
        self._check(gate)
        self.gates.append(gate)
        return self

    def extend(self, gates: Iterable[Gate]) -> Circuit:
        for g in gates:
            self.append(g)
        return self

    def compose(self, other: Circuit, qubits: Sequence[int] | None = None) -> Circuit:
        """Append ``other``, optionally remapping its wire ``i`` to ``qubits[i]``."""
        if qubits is None:
            qubits = range(other.n_qubits)
        qubits = list(qubits)
        if len(qubits) != other.n_qubits:
            raise UsageError("qubit map length does not match the composed circuit")
        for g in other.gates:
            self.append(replace(g, qubits=tuple(qubits[q] for q in g.qubits)))
        return self

    # builder helpers
    def x(self, q):
        return self.append(Gate("X", (q,)))

    def h(self, q):
        return self.append(Gate("H", (q,)))

    def ry(self, q, theta=None, param=None):
        return self.append(Gate("RY", (q,), theta, param))

    def cx(self, c, t):
        return self.append(Gate("CX", (c, t)))

    def cz(self, c, t):
        return self.append(Gate("CZ", (c, t)))

    def cry(self, c, t, theta=None, param=None):
        return self.append(Gate("CRY", (c, t), theta, param))

    def ccry(self, c1, c2, t, theta=None, param=None):
        return self.append(Gate("CCRY", (c1, c2, t), theta, param))

    def rbs(self, q1, q2, theta=None, param=None):
        return self.append(Gate("RBS", (q1, q2), theta, param))

    def mcx(self, controls, t, ctrl_state=None):
        return self.append(Gate("MCX", (*controls, t), ctrl_state=ctrl_state))

    def mcry(self, controls, t, theta, ctrl_state=None):
        return self.append(Gate("MCRY", (*controls, t), theta, ctrl_state=ctrl_state))

    @property
    def num_parameters(self) -> int:
        slots = [g.param for g in self.gates if g.param is not None]
        return max(slots) + 1 if slots else 0

    def bind(self, params: Sequence[float]) -> Circuit:
        params = np.asarray(params, dtype=float).ravel()
        if params.size != self.num_parameters:
            raise UsageError(f"expected {self.num_parameters} parameters, got {params.size}")
        gates = [
            replace(g, theta=float(params[g.param]), param=None) if g.param is not None else g
            for g in self.gates
        ]
        return Circuit(self.n_qubits, gates)

    def inverse(self) -> Circuit:
        return Circuit(self.n_qubits, [g.inverse() for g in reversed(self.gates)])

    def __len__(self):
        return len(self.gates)


class Statevector:
    """Complex amplitudes of an ``n_qubits`` register."""

    def __init__(self, n_qubits: int, amplitudes=None):
        self.n_qubits = int(n_qubits)
        dim = 1 << self.n_qubits
        if amplitudes is None:
            amplitudes = np.zeros(dim, dtype=complex)
            amplitudes[0] = 1.0
        amplitudes = np.ascontiguousarray(amplitudes, dtype=complex)
        if amplitudes.shape != (dim,):
            raise UsageError(f"expected {dim} amplitudes, got shape {amplitudes.shape}")
        self.amplitudes = amplitudes

    def copy(self) -> Statevector:
        return Statevector(self.n_qubits, self.amplitudes.copy())

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amplitudes) ** 2)))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def apply(self, gate: Gate) -> Statevector:
        """Apply ``gate`` in place and return ``self``."""
        _apply(self.amplitudes, self.n_qubits, gate)
        return self

    def __repr__(self):
        return f"Statevector(n_qubits={self.n_qubits})"


def new_register(n: int, cap: int = MAX_QUBITS) -> Statevector:
    if not 1 <= n <= cap:
        raise CapacityError(f"register size {n} outside [1, {cap}]")
    return Statevector(n)


def _index(lead: int, n: int, fixed: Mapping[int, int]):
    idx = [slice(None)] * (lead + n)
    for q, b in fixed.items():
        idx[lead + n - 1 - q] = b
    return tuple(idx)


def _apply_1q(arr, n, mat, target, controls=(), ctrl_state=None):
    lead = arr.ndim - 1
    v = arr.reshape(arr.shape[:-1] + (2,) * n)
    fixed = dict(zip(controls, ctrl_state if ctrl_state is not None else [1] * len(controls)))
    i0 = _index(lead, n, {**fixed, target: 0})
    i1 = _index(lead, n, {**fixed, target: 1})
    a0 = v[i0].copy()
    a1 = v[i1].copy()
    v[i0] = mat[0, 0] * a0 + mat[0, 1] * a1
    v[i1] = mat[1, 0] * a0 + mat[1, 1] * a1


def _apply(arr: np.ndarray, n: int, gate: Gate) -> None:
    """Apply ``gate`` in place to ``arr`` of shape ``(..., 2**n)``."""
    if max(gate.qubits) >= n:
        raise UsageError(f"{gate.kind} on {gate.qubits} exceeds {n} qubits")
    if gate.param is not None:
        raise UsageError(f"{gate.kind} has an unbound parameter slot {gate.param}")
    k, q = gate.kind, gate.qubits
    if k == "RBS":
        lead = arr.ndim - 1
        v = arr.reshape(arr.shape[:-1] + (2,) * n)
        i01 = _index(lead, n, {q[0]: 0, q[1]: 1})
        i10 = _index(lead, n, {q[0]: 1, q[1]: 0})
        c, s = math.cos(gate.theta), math.sin(gate.theta)
        a01 = v[i01].copy()
        a10 = v[i10].copy()
        v[i01] = c * a01 - s * a10
        v[i10] = s * a01 + c * a10
    elif k == "CZ":
        lead = arr.ndim - 1
        v = arr.reshape(arr.shape[:-1] + (2,) * n)
        v[_index(lead, n, {q[0]: 1, q[1]: 1})] *= -1
    elif k in ("X", "Y", "Z", "H"):
        _apply_1q(arr, n, {"X": _X, "Y": _Y, "Z": _Z, "H": _H}[k], q[0])
    elif k == "RY":
        _apply_1q(arr, n, _ry(gate.theta), q[0])
    elif k in ("CX", "MCX"):
        _apply_1q(arr, n, _X, q[-1], q[:-1], gate.ctrl_state)
    else:  # CRY, CCRY, MCRY
        _apply_1q(arr, n, _ry(gate.theta), q[-1], q[:-1], gate.ctrl_state)


def apply_gate(state: Statevector, gate: Gate) -> Statevector:
    """Return a new state with ``gate`` applied; ``state`` is left untouched."""
    return state.copy().apply(gate)


def apply_ccry(state: Statevector, theta: float, c1: int, c2: int, target: int) -> Statevector:
    return apply_gate(state, Gate("CCRY", (c1, c2, target), theta))


def run(circuit: Circuit, state: Statevector | None = None, params=None) -> Statevector:
    """Execute ``circuit`` on a copy of ``state`` (default ``|0...0>``)."""
    if params is not None:
        circuit = circuit.bind(params)
    if state is None:
        state = new_register(circuit.n_qubits)
    elif state.n_qubits != circuit.n_qubits:
        raise UsageError(f"circuit width {circuit.n_qubits} != state width {state.n_qubits}")
    else:
        state = state.copy()
    for g in circuit.gates:
        _apply(state.amplitudes, state.n_qubits, g)
    return state


def gate_matrix(gate: Gate) -> np.ndarray:
    """Local unitary of ``gate`` in textbook order: first listed qubit is the leftmost ket label."""
    k = gate.n_touched
    local = replace(gate, qubits=tuple(range(k - 1, -1, -1)))
    dim = 1 << k
    # each row of the identity is one basis input; transpose to get columns
    basis = np.eye(dim, dtype=complex)
    _apply(basis, k, local)
    return basis.T.copy()


def lower_rbs(circuit: Circuit) -> Circuit:
    """Replace every RBS by its {H, CZ, RY} decomposition."""
    out = Circuit(circuit.n_qubits)
    for g in circuit.gates:
        if g.kind != "RBS":
            out.append(g)
            continue
        if g.theta is None:
            raise UsageError("bind parameters before lowering RBS")
        a, b = g.qubits
        out.h(a).h(b).cz(a, b).ry(a, -g.theta).ry(b, g.theta).cz(a, b).h(a).h(b)
    return out


def amplitude_encode(values: Sequence[float], atol: float = 1e-9) -> Circuit:
    """Circuit preparing ``sum_j values[j] |j>`` from ``|0...0>``.

    Binary rotation tree: the top qubit splits the vector into its lower and
    upper halves, each following qubit splits the current block, controlled on
    all higher qubits.  Leaf angles use the signed pair ``atan2`` so negative
    entries need no extra layer.
    """
    v = np.asarray(values, dtype=float).ravel()
    dim = v.size
    n = dim.bit_length() - 1
    if dim < 2 or (1 << n) != dim:
        raise ValidationError(f"length {dim} is not a power of two >= 2")
    if not np.all(np.isfinite(v)):
        raise ValidationError("non-finite amplitude")
    total = float(np.sum(v * v))
    if total == 0.0:
        raise ValidationError("all-zero amplitude vector")
    if abs(total - 1.0) > atol:
        raise ValidationError(f"amplitudes not normalized: sum of squares = {total!r}")
    v = v / math.sqrt(total)

    circ = Circuit(n)
    # squared-norm pyramid: level[k][j] is the weight of block j at depth k
    weights = [v * v]
    while weights[-1].size > 1:
        w = weights[-1]
        weights.append(w[0::2] + w[1::2])
    weights.reverse()  # weights[k] has 2**k blocks

    for depth in range(n):
        target = n - 1 - depth
        controls = tuple(range(n - 1, target, -1))
        for j in range(1 << depth):
            if depth == n - 1:
                a, b = v[2 * j], v[2 * j + 1]
                if a == 0.0 and b == 0.0:
                    continue
                theta = 2.0 * math.atan2(b, a)
            else:
                lo, hi = weights[depth + 1][2 * j], weights[depth + 1][2 * j + 1]
                if lo + hi == 0.0 or hi == 0.0:
                    continue
                theta = 2.0 * math.atan2(math.sqrt(hi), math.sqrt(lo))
            if theta == 0.0:
                continue
            if depth == 0:
                circ.ry(target, theta)
            else:
                # bit (depth-1-i) of j, MSB first, matches controls order
                state = tuple((j >> (depth - 1 - i)) & 1 for i in range(depth))
                circ.mcry(controls, target, theta, ctrl_state=state)
    return circ


@dataclass
class Observable:
    """Real linear combination of Z-products: ``terms = [(coeff, {qubits}), ...]``."""

    terms: list[tuple[float, frozenset[int]]] = field(default_factory=list)

    def __post_init__(self):
        self.terms = [(float(c), frozenset(int(q) for q in s)) for c, s in self.terms]

    def add(self, coeff: float, support: Iterable[int] = ()) -> Observable:
        self.terms.append((float(coeff), frozenset(int(q) for q in support)))
        return self

    def simplify(self, tol: float = 0.0) -> Observable:
        acc: dict[frozenset[int], float] = {}
        for c, s in self.terms:
            acc[s] = acc.get(s, 0.0) + c
        return Observable([(c, s) for s, c in sorted(acc.items(), key=lambda kv: sorted(kv[0])) if abs(c) > tol])

    def diagonal(self, n: int) -> np.ndarray:
        """Eigenvalue of the observable on each basis state."""
        idx = np.arange(1 << n)
        out = np.zeros(1 << n)
        for c, s in self.terms:
            if s and max(s) >= n:
                raise UsageError(f"observable acts on qubit {max(s)} of a {n}-qubit register")
            mask = sum(1 << q for q in s)
            parity = np.bitwise_count(idx & mask) & 1
            out += c * (1.0 - 2.0 * parity)
        return out


def expectation(state: Statevector, obs: Observable) -> float:
    return float(np.dot(state.probabilities(), obs.diagonal(state.n_qubits)))


def probability_of(state: Statevector, qubit: int, outcome: int) -> float:
    n = state.n_qubits
    if not 0 <= qubit < n:
        raise UsageError(f"qubit {qubit} outside register of {n}")
    if outcome not in (0, 1):
        raise UsageError(f"outcome must be 0 or 1, got {outcome!r}")
    p = state.probabilities().reshape((2,) * n)
    return float(np.sum(p[_index(0, n, {qubit: outcome})]))


def derive_seed(seed, *keys: int) -> list[int]:
    """Seed for an independent sub-task, e.g. ``derive_seed(seed, restart)``."""
    base = [int(seed)] if np.isscalar(seed) else [int(s) for s in seed]
    return base + [int(k) for k in keys]


def make_rng(seed, *keys: int) -> np.random.Generator:
    """Counter-based Philox generator; ``keys`` derive independent child streams."""
    ss = np.random.SeedSequence(derive_seed(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def bitstring(index: int, n: int) -> str:
    return "".join("1" if (index >> q) & 1 else "0" for q in range(n))


def index_of(bits: str) -> int:
    return sum(1 << q for q, b in enumerate(bits) if b == "1")


def _counts_from_array(counts: np.ndarray, n: int) -> dict[str, int]:
    return {bitstring(int(i), n): int(counts[i]) for i in np.flatnonzero(counts)}


def sample(state: Statevector, shots: int, seed) -> dict[str, int]:
    """Multinomial draw of ``shots`` measurements of every qubit."""
    if shots < 1:
        raise UsageError(f"shots must be >= 1, got {shots}")
    p = state.probabilities()
    p = p / p.sum()
    counts = make_rng(seed).multinomial(shots, p)
    return _counts_from_array(counts, state.n_qubits)


def dump_amplitudes_csv(state: Statevector, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "real", "imag"])
        for i, a in enumerate(state.amplitudes):
            w.writerow([i, repr(float(a.real)), repr(float(a.imag))])
