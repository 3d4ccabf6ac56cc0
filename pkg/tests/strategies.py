"""Shared generators: random circuits and the amplitude-encoding corpus."""

import math

import numpy as np
from hypothesis import strategies as st

from quant_actuary.sim import Circuit, Gate

ONE_QUBIT = ("X", "Y", "Z", "H", "RY")
TWO_QUBIT = ("CX", "CZ", "CRY", "RBS")
ANGLED = {"RY", "CRY", "CCRY", "RBS", "MCRY"}


def _kinds(n):
    kinds = list(ONE_QUBIT)
    if n >= 2:
        kinds += TWO_QUBIT
    if n >= 3:
        kinds += ["CCRY", "MCX", "MCRY"]
    return kinds


def build_random_circuit(n, n_gates, rng):
    """Random circuit over the full gate set drawn from ``rng``."""
    circ = Circuit(n)
    kinds = _kinds(n)
    for _ in range(n_gates):
        kind = kinds[rng.integers(len(kinds))]
        if kind in ONE_QUBIT:
            width = 1
        elif kind in TWO_QUBIT:
            width = 2
        elif kind == "CCRY":
            width = 3
        else:
            width = int(rng.integers(2, n + 1))
        qubits = tuple(int(q) for q in rng.choice(n, size=width, replace=False))
        theta = float(rng.uniform(-2 * math.pi, 2 * math.pi)) if kind in ANGLED else None
        ctrl = tuple(int(b) for b in rng.integers(0, 2, size=width - 1)) if kind in ("MCX", "MCRY") else None
        circ.append(Gate(kind, qubits, theta, ctrl_state=ctrl))
    return circ


@st.composite
def random_circuit(draw, max_qubits=8, max_gates=200):
    n = draw(st.integers(1, max_qubits))
    n_gates = draw(st.integers(0, max_gates))
    seed = draw(st.integers(0, 2**32 - 1))
    return build_random_circuit(n, n_gates, np.random.default_rng(seed))


@st.composite
def signed_unit_vectors(draw, max_qubits=6):
    n = draw(st.integers(1, max_qubits))
    seed = draw(st.integers(0, 2**32 - 1))
    sparsity = draw(st.sampled_from([0.0, 0.3, 0.7]))
    rng = np.random.default_rng(seed)
    v = rng.normal(size=1 << n)
    v[rng.random(v.size) < sparsity] = 0.0
    if not np.any(v):
        v[int(rng.integers(v.size))] = 1.0
    return v / np.linalg.norm(v)


def encoding_corpus():
    """Fixed set of signed normalized vectors of length 2..64."""
    from quant_actuary.excess import discretize
    from quant_actuary.leecarter import build_log_matrix, load_mortality, sample_data_path

    rng = np.random.default_rng(20240611)
    corpus = []
    for n in range(1, 7):
        dim = 1 << n
        corpus += [np.eye(dim)[0], np.eye(dim)[-1], -np.eye(dim)[dim // 2], np.full(dim, 1 / math.sqrt(dim))]
        for _ in range(8):
            v = rng.normal(size=dim)
            corpus.append(v / np.linalg.norm(v))
            w = v * (rng.random(dim) < 0.4)
            if np.any(w):
                corpus.append(w / np.linalg.norm(w))
            u = -np.abs(v)
            corpus.append(u / np.linalg.norm(u))
    for n in range(2, 7):
        corpus.append(np.sqrt(discretize(n=n).probabilities))
    D = build_log_matrix(load_mortality(sample_data_path())).D
    corpus.append((D / np.linalg.norm(D)).ravel())
    return corpus
