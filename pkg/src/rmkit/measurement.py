"""Randomized-measurement simulation and the X(u) statistic.

``X(u) = 2^N sum_{s,s'} (-2)^{-D[s,s']} P_u(s) P_u(s')`` where ``D`` is the
Hamming distance.  The kernel factorizes over qubits into
``k = [[1, -1/2], [-1/2, 1]]``, so the double sum costs ``O(N 2^N)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .states import DenseState
from .unitaries import UnitaryAngles, kron_all, unitary_matrices

_PAULI_Z = np.diag([1.0, -1.0]).astype(complex)


@dataclass(frozen=True)
class OutcomeDistribution:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if np.any(p < -1e-12):
            raise ValueError("outcome probabilities must be non-negative")
        p = np.clip(p, 0.0, None)
        if abs(p.sum() - 1.0) > 1e-10:
            raise ValueError(f"outcome probabilities sum to {p.sum()!r}")
        object.__setattr__(self, "probs", p)

    @property
    def n_qubits(self) -> int:
        return int(np.log2(self.probs.size))


@dataclass(frozen=True)
class MeasurementBatch:
    """One sampled unitary with its observed bitstrings (bit ``i`` = qubit ``i``)."""

    angles: UnitaryAngles
    outcomes: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "outcomes", np.asarray(self.outcomes, dtype=np.int64).reshape(-1))
        if np.any(self.outcomes < 0) or np.any(self.outcomes >= 2**self.angles.n_qubits):
            raise ValueError("outcome out of range for the number of qubits")

    @property
    def n_shots(self) -> int:
        return int(self.outcomes.size)

    @property
    def n_qubits(self) -> int:
        return self.angles.n_qubits

    def to_record(self) -> dict:
        return {"angles": self.angles.to_vector(), "outcomes": self.outcomes.tolist(),
                "n_shots": self.n_shots}

    @classmethod
    def from_record(cls, rec: dict) -> "MeasurementBatch":
        batch = cls(UnitaryAngles.from_vector(rec["angles"]), rec["outcomes"])
        if "n_shots" in rec and rec["n_shots"] != batch.n_shots:
            raise ValueError("n_shots does not match the number of outcomes")
        return batch


def write_batches(path, batches) -> None:
    with open(path, "w") as fh:
        for b in batches:
            fh.write(json.dumps(b.to_record()) + "\n")


def read_batches(path) -> list[MeasurementBatch]:
    with open(path) as fh:
        return [MeasurementBatch.from_record(json.loads(line)) for line in fh if line.strip()]


def _as_arrays(xi, phi=None):
    if isinstance(xi, UnitaryAngles):
        return xi.xi[None, :], xi.phi[None, :]
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    return xi, phi


def apply_local(vecs: np.ndarray, mats: np.ndarray, n: int) -> np.ndarray:
    """Apply ``u_i`` to qubit ``i`` of every vector.

    ``vecs`` has shape ``(B, R, 2**n)`` and ``mats`` has shape ``(B, n, 2, 2)``.
    """
    B, R, _ = vecs.shape
    out = vecs
    for i in range(n):
        t = out.reshape(B, R, 2 ** (n - 1 - i), 2, 2**i)
        out = np.einsum("bst,brhtl->brhsl", mats[:, i], t).reshape(B, R, 2**n)
    return out


def outcome_probabilities(state: DenseState, xi, phi=None) -> np.ndarray:
    """``P_u(s)`` for a batch of angle sets; returns shape ``(B, 2**N)``."""
    xi, phi = _as_arrays(xi, phi)
    n = state.n_qubits
    if xi.shape[1] != n:
        raise ValueError(f"angles act on {xi.shape[1]} qubits, state has {n}")
    w, V = state.components()
    mats = unitary_matrices(xi, phi)
    B = xi.shape[0]
    out = np.empty((B, 2**n))
    # chunk to bound memory at B * rank * 2^N complex entries
    step = max(1, int(2**22 // (V.shape[0] * 2**n)))
    for lo in range(0, B, step):
        amp = apply_local(np.broadcast_to(V, (min(step, B - lo),) + V.shape).copy(),
                          mats[lo:lo + step], n)
        out[lo:lo + step] = np.einsum("k,bks->bs", w, np.abs(amp) ** 2)
    return np.clip(out, 0.0, None)


def outcome_distribution(state: DenseState, angles: UnitaryAngles) -> OutcomeDistribution:
    p = outcome_probabilities(state, angles)[0]
    return OutcomeDistribution(p / p.sum())


def kernel_apply(p: np.ndarray, n: int) -> np.ndarray:
    """Multiply by ``k^{(x) n}`` with ``k = [[1, -1/2], [-1/2, 1]]`` along the last axis."""
    lead = p.shape[:-1]
    out = np.asarray(p, dtype=float)
    for i in range(n):
        t = out.reshape(lead + (2 ** (n - 1 - i), 2, 2**i))
        out = (t - 0.5 * t[..., ::-1, :]).reshape(lead + (2**n,))
    return out


def x_from_probs(p: np.ndarray, n: int) -> np.ndarray:
    """Kernel sum ``2^N p^T K p`` along the last axis."""
    return 2.0**n * np.sum(p * kernel_apply(p, n), axis=-1)


def x_exact_batch(state: DenseState, xi, phi=None) -> np.ndarray:
    return x_from_probs(outcome_probabilities(state, xi, phi), state.n_qubits)


def x_exact(state: DenseState, angles: UnitaryAngles) -> float:
    return float(x_exact_batch(state, angles)[0])


def hamming(a, b) -> np.ndarray:
    return np.bitwise_count(np.bitwise_xor(np.asarray(a, dtype=np.uint64),
                                           np.asarray(b, dtype=np.uint64))).astype(np.int64)


def x_exact_naive(state: DenseState, angles: UnitaryAngles) -> float:
    """Direct ``O(4^N)`` double sum; kept as a test oracle for small ``N``."""
    n = state.n_qubits
    if n > 6:
        raise ValueError("naive kernel sum limited to N <= 6")
    p = outcome_probabilities(state, angles)[0]
    s = np.arange(2**n)
    K = (-2.0) ** (-hamming(s[:, None], s[None, :]))
    return float(2.0**n * p @ K @ p)


def x_pauli(state: DenseState, angles: UnitaryAngles) -> float:
    """``2^{-N} sum_A 3^{|A|} <sigma^z_A>^2`` with rotated Pauli-Z strings."""
    n = state.n_qubits
    if angles.n_qubits != n:
        raise ValueError(f"angles act on {angles.n_qubits} qubits, state has {n}")
    us = unitary_matrices(angles.xi, angles.phi)
    rotated = [u.conj().T @ _PAULI_Z @ u for u in us]
    eye = np.eye(2, dtype=complex)
    rho = state.rho
    total = 0.0
    for size in range(n + 1):
        for A in combinations(range(n), size):
            op = kron_all([rotated[i] if i in A else eye for i in range(n)])
            total += 3.0**size * np.trace(op @ rho).real ** 2
    return float(total / 2**n)


def sample_bitstrings(state: DenseState, angles: UnitaryAngles, n_shots: int,
                      rng: np.random.Generator) -> MeasurementBatch:
    """Inverse-CDF sampling of ``n_shots`` outcomes after rotating by ``angles``."""
    if n_shots < 1:
        raise ValueError(f"n_shots must be >= 1, got {n_shots}")
    p = outcome_distribution(state, angles).probs
    cdf = np.cumsum(p)
    cdf /= cdf[-1]
    s = np.searchsorted(cdf, rng.random(n_shots), side="right")
    return MeasurementBatch(angles, np.minimum(s, p.size - 1))


def sample_counts(probs: np.ndarray, n_shots: int, rng: np.random.Generator) -> np.ndarray:
    """Outcome histograms for a batch of distributions (rows of ``probs``)."""
    p = np.atleast_2d(np.asarray(probs, dtype=float))
    p = p / p.sum(axis=-1, keepdims=True)
    return rng.multinomial(n_shots, p)


def counts_from_outcomes(outcomes, n: int) -> np.ndarray:
    return np.bincount(np.asarray(outcomes, dtype=np.int64), minlength=2**n)


def x_estimate_counts(counts: np.ndarray, n: int) -> np.ndarray:
    """Unbiased X_e from outcome histograms (last axis), via the factorized kernel."""
    c = np.asarray(counts, dtype=float)
    nm = c.sum(axis=-1)
    if np.any(nm < 2):
        raise ValueError("need at least two shots per unitary")
    return 2.0**n * (np.sum(c * kernel_apply(c, n), axis=-1) - nm) / (nm * (nm - 1))


def x_estimate_pairwise(outcomes, n: int, chunk: int = 2048) -> float:
    """Unbiased X_e as the explicit sum over ordered pairs ``m != m'``."""
    s = np.asarray(outcomes, dtype=np.int64)
    nm = s.size
    if nm < 2:
        raise ValueError("need at least two shots per unitary")
    total = 0.0
    for lo in range(0, nm, chunk):
        blk = s[lo:lo + chunk]
        d = hamming(blk[:, None], s[None, :])
        total += np.sum((-2.0) ** (-d))
    total -= nm  # m == m' terms, each (-2)^0
    return float(2.0**n * total / (nm * (nm - 1)))


def x_estimate(batch: MeasurementBatch, method: str = "counts") -> float:
    if batch.n_shots < 2:
        raise ValueError("need at least two shots per unitary")
    n = batch.n_qubits
    if method == "pairwise":
        return x_estimate_pairwise(batch.outcomes, n)
    if method == "counts":
        return float(x_estimate_counts(counts_from_outcomes(batch.outcomes, n), n))
    raise ValueError(f"unknown method {method!r}")
