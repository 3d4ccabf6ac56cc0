"""Lee-Carter mortality fitting through a variational quantum SVD.

The centered log-mortality matrix ``D`` is encoded row-major as a two-register
state ``sum_{x,t} D[x,t]/C |x>_A |t>_B``.  Its Schmidt coefficients are the
singular values of ``D/C``.  Two real circuits ``U_A`` and ``V_B`` are trained
so that both registers read out the same index; when they do, the circuits
map the singular vectors onto computational basis states and the dominant
pair gives ``beta_x`` and ``kappa_t``.
"""

from __future__ import annotations

import csv
import itertools
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IngestionError, NumericalError, UsageError, ValidationError
from .optimizers import NelderMeadConfig, OptimizationTrace, initial_params, minimize
from .sim import Circuit, Statevector, amplitude_encode, derive_seed, run, sample

__all__ = [
    "MortalitySurface",
    "LeeCarterDecomposition",
    "QsvdState",
    "SingularEstimate",
    "Metrics",
    "QsvdTraining",
    "load_mortality",
    "sample_data_path",
    "build_log_matrix",
    "encode_matrix",
    "ansatz_uv",
    "qsvd_loss",
    "circuit_unitary",
    "extract_singular",
    "extract_from_unitaries",
    "metrics",
    "classical_svd_oracle",
    "train_qsvd",
    "DegeneracyWarning",
]

KL_EPS = 1e-12

# three RY/CX layers per two-qubit side already reach any real basis change
DEFAULT_LAYERS = 3


class DegeneracyWarning(UserWarning):
    """Top two Schmidt weights coincide; the dominant pair is not unique."""


@dataclass(frozen=True)
class MortalitySurface:
    ages: tuple[str, ...]
    years: tuple[int, ...]
    rates: np.ndarray  # ages x years

    def __post_init__(self):
        r = np.asarray(self.rates, dtype=float)
        object.__setattr__(self, "rates", r)
        if r.shape != (len(self.ages), len(self.years)):
            raise IngestionError(f"rates shape {r.shape} does not match {len(self.ages)} ages x {len(self.years)} years")
        if np.any(~np.isfinite(r)) or np.any(r <= 0):
            raise IngestionError("mortality rates must be finite and strictly positive")


def _age_key(label: str):
    head = label.replace("+", "").split("-")[0].strip()
    try:
        return (0, float(head), label)
    except ValueError:
        return (1, 0.0, label)


def load_mortality(path) -> MortalitySurface:
    """Read a tab-separated ``age  year  rate`` file into a complete grid."""
    path = Path(path)
    cells: dict[tuple[str, int], float] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["age", "year", "rate"]:
            raise IngestionError(f"{path}: expected header 'age<TAB>year<TAB>rate', got {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise IngestionError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            age = row[0].strip()
            try:
                year = int(row[1])
                rate = float(row[2])
            except ValueError as exc:
                raise IngestionError(f"{path}:{lineno}: cannot parse {row!r}") from exc
            if (age, year) in cells:
                raise IngestionError(f"{path}:{lineno}: duplicate cell (age={age}, year={year})")
            if not math.isfinite(rate) or rate <= 0:
                raise IngestionError(f"{path}:{lineno}: non-positive rate {rate!r} at (age={age}, year={year})")
            cells[(age, year)] = rate
    if not cells:
        raise IngestionError(f"{path}: no data rows")
    ages = tuple(sorted({a for a, _ in cells}, key=_age_key))
    years = tuple(sorted({y for _, y in cells}))
    rates = np.empty((len(ages), len(years)))
    for i, a in enumerate(ages):
        for j, y in enumerate(years):
            if (a, y) not in cells:
                raise IngestionError(f"{path}: missing cell (age={a}, year={y})")
            rates[i, j] = cells[(a, y)]
    return MortalitySurface(ages, years, rates)


def sample_data_path() -> Path:
    return Path(__file__).parent / "data" / "mortality_sample.tsv"


@dataclass
class LeeCarterDecomposition:
    ages: tuple[str, ...]
    years: tuple[int, ...]
    alpha: np.ndarray
    D: np.ndarray
    beta: np.ndarray | None = None
    kappa: np.ndarray | None = None
    sigma1: float | None = None

    def to_tsv(self, path, comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(["section", "label", "value"])
            for a, v in zip(self.ages, self.alpha):
                w.writerow(["alpha", a, repr(float(v))])
            if self.beta is not None:
                for a, v in zip(self.ages, self.beta):
                    w.writerow(["beta", a, repr(float(v))])
            if self.kappa is not None:
                for y, v in zip(self.years, self.kappa):
                    w.writerow(["kappa", y, repr(float(v))])
            if self.sigma1 is not None:
                w.writerow(["sigma1", "", repr(float(self.sigma1))])


def build_log_matrix(surface: MortalitySurface) -> LeeCarterDecomposition:
    """``alpha_x`` = mean over years of ``ln m``; ``D = ln m - alpha`` (rows sum to 0)."""
    logm = np.log(surface.rates)
    alpha = logm.mean(axis=1)
    return LeeCarterDecomposition(surface.ages, surface.years, alpha, logm - alpha[:, None])


@dataclass
class QsvdState:
    """Encoded ``D/C``: register A (rows) on the high qubits, B (columns) on the low ones."""

    rows: int
    cols: int
    n_a: int
    n_b: int
    norm: float
    circuit: Circuit
    state: Statevector

    @property
    def n_qubits(self) -> int:
        return self.n_a + self.n_b

    def decode(self, state: Statevector | None = None) -> np.ndarray:
        amps = (state or self.state).amplitudes.real.reshape(1 << self.n_a, 1 << self.n_b)
        return amps[: self.rows, : self.cols]


def _qubits_for(dim: int) -> int:
    return max(1, math.ceil(math.log2(dim))) if dim > 1 else 1


def encode_matrix(D) -> QsvdState:
    D = np.asarray(D, dtype=float)
    if D.ndim != 2:
        raise ValidationError("D must be a matrix")
    C = float(np.linalg.norm(D))
    if C == 0.0:
        raise ValidationError("cannot encode the zero matrix")
    n_a, n_b = _qubits_for(D.shape[0]), _qubits_for(D.shape[1])
    padded = np.zeros((1 << n_a, 1 << n_b))
    padded[: D.shape[0], : D.shape[1]] = D / C
    circ = amplitude_encode(padded.ravel())
    return QsvdState(D.shape[0], D.shape[1], n_a, n_b, C, circ, run(circ))


def ansatz_uv(n_qubits: int, layers: int, params) -> Circuit:
    """Real hardware-efficient ansatz: per layer an RY column then a CX ladder."""
    params = np.asarray(params, dtype=float).ravel()
    if params.size != n_qubits * layers:
        raise UsageError(f"expected {n_qubits * layers} parameters, got {params.size}")
    circ = Circuit(n_qubits)
    it = iter(params)
    for _ in range(layers):
        for q in range(n_qubits):
            circ.ry(q, float(next(it)))
        for q in range(n_qubits - 1):
            circ.cx(q, q + 1)
    return circ


def _split(params, qs: QsvdState, layers: int):
    params = np.asarray(params, dtype=float).ravel()
    na = qs.n_a * layers
    if params.size != na + qs.n_b * layers:
        raise UsageError(f"expected {na + qs.n_b * layers} parameters, got {params.size}")
    return params[:na], params[na:]


def _rotated(theta_a, theta_b, qs: QsvdState, layers: int) -> Statevector:
    circ = Circuit(qs.n_qubits)
    circ.compose(ansatz_uv(qs.n_a, layers, theta_a), range(qs.n_b, qs.n_qubits))
    circ.compose(ansatz_uv(qs.n_b, layers, theta_b), range(qs.n_b))
    return run(circ, qs.state)


def _diag_probs(state: Statevector, qs: QsvdState) -> np.ndarray:
    p = state.probabilities().reshape(1 << qs.n_a, 1 << qs.n_b)
    m = min(p.shape)
    return p[np.arange(m), np.arange(m)]


def qsvd_loss(theta_a, theta_b, qs: QsvdState, layers: int = DEFAULT_LAYERS, mode="exact", shots: int = 1000, seed=0) -> float:
    """``1 - P(both registers read the same index)``; exact or from ``shots`` samples."""
    out = _rotated(theta_a, theta_b, qs, layers)
    if mode == "exact":
        # rounding can push a perfect match a few ulps below zero
        return max(0.0, float(1.0 - _diag_probs(out, qs).sum()))
    if mode != "shots":
        raise UsageError(f"mode must be 'exact' or 'shots', got {mode!r}")
    counts = sample(out, shots, seed)
    matches = 0
    for bits, c in counts.items():
        b = bits[: qs.n_b]  # qubit 0 first: B occupies the low qubits
        a = bits[qs.n_b :]
        if int(a[::-1], 2) == int(b[::-1], 2):
            matches += c
    return 1.0 - matches / shots


def circuit_unitary(circ: Circuit) -> np.ndarray:
    """Dense unitary of a small circuit (column j = circuit applied to ``|j>``)."""
    dim = 1 << circ.n_qubits
    cols = []
    for j in range(dim):
        s = Statevector(circ.n_qubits, np.eye(dim, dtype=complex)[j])
        cols.append(run(circ, s).amplitudes)
    return np.array(cols).T


@dataclass
class SingularEstimate:
    lambdas: np.ndarray  # sqrt of the joint diagonal probabilities, descending
    order: np.ndarray  # basis index of each entry of ``lambdas``
    u: np.ndarray
    v: np.ndarray
    sigma1: float

    @property
    def match_probability(self) -> float:
        return float(np.sum(self.lambdas**2))


def _sign_fix(u: np.ndarray) -> np.ndarray:
    i = int(np.argmax(np.abs(u)))
    return -u if u[i] < 0 else u


def extract_from_unitaries(U: np.ndarray, V: np.ndarray, qs: QsvdState) -> SingularEstimate:
    """Dominant singular pair from aligning unitaries ``U`` (register A) and ``V`` (register B)."""
    M = qs.state.amplitudes.reshape(1 << qs.n_a, 1 << qs.n_b)
    aligned = U @ M @ V.T
    m = min(aligned.shape)
    diag = np.abs(aligned[np.arange(m), np.arange(m)]) ** 2
    order = np.argsort(-diag, kind="stable")
    lambdas = np.sqrt(diag[order])
    if m > 1 and lambdas[0] ** 2 - lambdas[1] ** 2 < 1e-6:
        warnings.warn("top two Schmidt weights are degenerate; singular pair not unique", DegeneracyWarning, stacklevel=2)
    top = int(order[0])
    u = np.conj(U[top, :])[: qs.rows].real
    v = np.conj(V[top, :])[: qs.cols].real
    u = _sign_fix(u / np.linalg.norm(u))
    v = v / np.linalg.norm(v)
    # kappa's sign follows beta so that sigma1 * beta kappa^T approximates D
    if u @ M[: qs.rows, : qs.cols].real @ v < 0:
        v = -v
    return SingularEstimate(lambdas, order, u, v, qs.norm * float(lambdas[0]))


def extract_singular(theta_a, theta_b, qs: QsvdState, layers: int = DEFAULT_LAYERS) -> SingularEstimate:
    U = circuit_unitary(ansatz_uv(qs.n_a, layers, theta_a))
    V = circuit_unitary(ansatz_uv(qs.n_b, layers, theta_b))
    return extract_from_unitaries(U, V, qs)


def classical_svd_oracle(D, tol: float = 1e-12, max_sweeps: int = 100):
    """One-sided Jacobi SVD: returns ``(sigma desc, U, V)`` with ``D = U diag(sigma) V^T``."""
    A = np.array(D, dtype=float)
    if A.ndim != 2 or max(A.shape) > 64:
        raise UsageError(f"oracle accepts matrices up to 64x64, got shape {A.shape}")
    transposed = A.shape[0] < A.shape[1]
    if transposed:
        A = A.T
    m, n = A.shape
    V = np.eye(n)
    scale = max(np.linalg.norm(A), 1e-300)
    for _ in range(max_sweeps):
        off = 0.0
        for i in range(n - 1):
            for j in range(i + 1, n):
                a = A[:, i] @ A[:, i]
                b = A[:, j] @ A[:, j]
                g = A[:, i] @ A[:, j]
                off = max(off, abs(g) / scale**2)
                if abs(g) <= tol * tol * scale**2:
                    continue
                zeta = (b - a) / (2.0 * g)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                Ai, Aj = A[:, i].copy(), A[:, j].copy()
                A[:, i], A[:, j] = c * Ai - s * Aj, s * Ai + c * Aj
                Vi, Vj = V[:, i].copy(), V[:, j].copy()
                V[:, i], V[:, j] = c * Vi - s * Vj, s * Vi + c * Vj
        if off < tol:
            break
    else:
        raise NumericalError(f"Jacobi SVD did not converge in {max_sweeps} sweeps")
    sigma = np.linalg.norm(A, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma, A, V = sigma[order], A[:, order], V[:, order]
    U = np.zeros((m, n))
    for k in range(n):
        if sigma[k] > 1e-14 * scale:
            U[:, k] = A[:, k] / sigma[k]
        else:
            # complete with a unit vector orthogonal to the columns found so far
            for e in np.eye(m):
                w = e - U[:, :k] @ (U[:, :k].T @ e)
                if np.linalg.norm(w) > 1e-8:
                    U[:, k] = w / np.linalg.norm(w)
                    break
    if transposed:
        U, V = V, U
    return sigma, U, V


@dataclass(frozen=True)
class Metrics:
    frobenius: float
    kl_beta: float
    kl_kappa: float


def _kl_squared(p_vec, q_vec) -> float:
    p = np.asarray(p_vec, dtype=float) ** 2 + KL_EPS
    q = np.asarray(q_vec, dtype=float) ** 2 + KL_EPS
    p, q = p / p.sum(), q / q.sum()
    return float(np.sum(p * np.log(p / q)))


def metrics(D, beta, kappa, sigma1, beta_ref, kappa_ref) -> Metrics:
    """Rank-1 reconstruction error and KL divergences of squared components to the reference pair."""
    D = np.asarray(D, dtype=float)
    fro = float(np.linalg.norm(D - sigma1 * np.outer(beta, kappa)))
    return Metrics(fro, _kl_squared(beta, beta_ref), _kl_squared(kappa, kappa_ref))


@dataclass
class QsvdTraining:
    trace: OptimizationTrace
    layers: int
    state: QsvdState
    theta_a: np.ndarray
    theta_b: np.ndarray
    estimate: SingularEstimate
    history: list[Metrics] = field(default_factory=list)
    betas: list[np.ndarray] = field(default_factory=list)
    kappas: list[np.ndarray] = field(default_factory=list)

    def rows(self):
        for rec, m in zip(self.trace.all_records(), self.history):
            yield rec.iteration, rec.value, m.frobenius, m.kl_beta, m.kl_kappa


def train_qsvd(D, optimizer=None, mode="exact", layers: int = DEFAULT_LAYERS, init_seed: int = 0, shots: int = 1000, seed: int = 0) -> QsvdTraining:
    """Minimize the mismatch loss; record Frobenius and KL metrics at every iterate."""
    D = np.asarray(D, dtype=float)
    qs = encode_matrix(D)
    optimizer = optimizer or NelderMeadConfig(iterations=200, simplex_scale=1.0)
    sigma, U_ref, V_ref = classical_svd_oracle(D)
    beta_ref, kappa_ref = U_ref[:, 0], V_ref[:, 0]

    if mode == "exact":
        def objective(theta):
            a, b = _split(theta, qs, layers)
            return qsvd_loss(a, b, qs, layers)
    else:
        calls = itertools.count()

        def objective(theta):
            a, b = _split(theta, qs, layers)
            return qsvd_loss(a, b, qs, layers, "shots", shots, derive_seed(seed, next(calls)))

    theta0 = initial_params((qs.n_a + qs.n_b) * layers, init_seed)
    trace = minimize(objective, theta0, optimizer)

    history, betas, kappas = [], [], []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegeneracyWarning)
        for rec in trace.all_records():
            a, b = _split(rec.params, qs, layers)
            est = extract_singular(a, b, qs, layers)
            history.append(metrics(D, est.u, est.v, est.sigma1, beta_ref, kappa_ref))
            betas.append(est.u)
            kappas.append(est.v)
    a, b = _split(trace.final.params, qs, layers)
    return QsvdTraining(trace, layers, qs, a, b, extract_singular(a, b, qs, layers), history, betas, kappas)
