"""Exact dense quantum states used as ground truth.

Basis convention: qubit ``i`` is bit ``i`` (weight ``2**i``) of a basis index,
matching the packed bitstrings produced by measurements.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_MAX_QUBITS = 12
_TOL = 1e-10
_MAGIC = b"RMST"
_VERSION = 1
_HEADER = struct.Struct("<4sHHB7x")


class ResourceLimitError(RuntimeError):
    """Requested problem size exceeds the configured desk-scale limit."""


def check_size(n_qubits: int, max_qubits: int = DEFAULT_MAX_QUBITS) -> None:
    if n_qubits < 1:
        raise ValueError(f"n_qubits must be >= 1, got {n_qubits}")
    if n_qubits > max_qubits:
        raise ResourceLimitError(
            f"{n_qubits} qubits exceeds the dense limit of {max_qubits}"
        )


def qubit_tensor(vec: np.ndarray, n: int) -> np.ndarray:
    """View a length ``2**n`` array (leading batch axes allowed) with axis ``i`` = qubit ``i``."""
    lead = vec.shape[:-1]
    t = vec.reshape(lead + (2,) * n)
    k = len(lead)
    return t.transpose(tuple(range(k)) + tuple(k + n - 1 - i for i in range(n)))


def flat_vector(t: np.ndarray, n: int) -> np.ndarray:
    """Inverse of :func:`qubit_tensor`."""
    k = t.ndim - n
    t = t.transpose(tuple(range(k)) + tuple(k + n - 1 - i for i in range(n)))
    return t.reshape(t.shape[:k] + (2**n,))


@dataclass(frozen=True, eq=False)
class DenseState:
    """An ``n_qubits`` state held either as a statevector or a density matrix."""

    n_qubits: int
    psi: np.ndarray | None = None
    rho_matrix: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        dim = 2**self.n_qubits
        if (self.psi is None) == (self.rho_matrix is None):
            raise ValueError("give exactly one of psi or rho_matrix")
        if self.psi is not None:
            psi = np.asarray(self.psi, dtype=complex).reshape(-1)
            if psi.size != dim:
                raise ValueError(f"statevector length {psi.size} != 2**{self.n_qubits}")
            if abs(np.vdot(psi, psi).real - 1.0) > _TOL:
                raise ValueError("statevector is not normalized")
            object.__setattr__(self, "psi", psi)
        else:
            rho = np.asarray(self.rho_matrix, dtype=complex)
            if rho.shape != (dim, dim):
                raise ValueError(f"density matrix shape {rho.shape} != ({dim}, {dim})")
            if abs(np.trace(rho) - 1.0) > _TOL:
                raise ValueError("density matrix trace is not 1")
            if np.max(np.abs(rho - rho.conj().T)) > _TOL:
                raise ValueError("density matrix is not Hermitian")
            evals = np.linalg.eigvalsh(rho)
            if evals[0] < -_TOL:
                raise ValueError(f"density matrix has negative eigenvalue {evals[0]:.3g}")
            object.__setattr__(self, "rho_matrix", rho)

    @property
    def dim(self) -> int:
        return 2**self.n_qubits

    @property
    def is_pure_vector(self) -> bool:
        return self.psi is not None

    @property
    def rho(self) -> np.ndarray:
        if self.psi is not None:
            if "rho" not in self._cache:
                self._cache["rho"] = np.outer(self.psi, self.psi.conj())
            return self._cache["rho"]
        return self.rho_matrix

    def components(self, cutoff: float = 1e-14):
        """Spectral decomposition ``rho = sum_k w_k |v_k><v_k|`` as ``(w, V)`` with rows ``V[k]``."""
        if "components" not in self._cache:
            if self.psi is not None:
                comp = (np.ones(1), self.psi[None, :])
            else:
                w, v = np.linalg.eigh(self.rho_matrix)
                keep = w > cutoff
                comp = (w[keep], v[:, keep].T.copy())
            self._cache["components"] = comp
        return self._cache["components"]


def from_statevector(psi) -> DenseState:
    psi = np.asarray(psi, dtype=complex).reshape(-1)
    n = int(round(np.log2(psi.size)))
    if 2**n != psi.size:
        raise ValueError("statevector length must be a power of two")
    return DenseState(n, psi=psi)


def from_density_matrix(rho) -> DenseState:
    rho = np.asarray(rho, dtype=complex)
    n = int(round(np.log2(rho.shape[0])))
    return DenseState(n, rho_matrix=rho)


def basis_state(bits: int, n: int, max_qubits: int = DEFAULT_MAX_QUBITS) -> DenseState:
    check_size(n, max_qubits)
    psi = np.zeros(2**n, dtype=complex)
    psi[bits] = 1.0
    return DenseState(n, psi=psi)


def make_product(n: int, max_qubits: int = DEFAULT_MAX_QUBITS) -> DenseState:
    """``|0...0>``."""
    return basis_state(0, n, max_qubits)


def make_ghz(n: int, max_qubits: int = DEFAULT_MAX_QUBITS) -> DenseState:
    check_size(n, max_qubits)
    psi = np.zeros(2**n, dtype=complex)
    psi[0] = psi[-1] = 1 / np.sqrt(2)
    return DenseState(n, psi=psi)


def make_haar_random_pure(n: int, rng: np.random.Generator,
                          max_qubits: int = DEFAULT_MAX_QUBITS) -> DenseState:
    check_size(n, max_qubits)
    z = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    return DenseState(n, psi=z / np.linalg.norm(z))


def make_maximally_mixed(n: int, max_qubits: int = DEFAULT_MAX_QUBITS) -> DenseState:
    check_size(n, max_qubits)
    return DenseState(n, rho_matrix=np.eye(2**n, dtype=complex) / 2**n)


def neel_bits(n: int) -> int:
    """Packed index of ``|0101...>`` (odd qubits excited)."""
    return sum(1 << i for i in range(1, n, 2))


def xy_hamiltonian(n: int, alpha: float, J: float = 1.0) -> np.ndarray:
    """Dense ``sum_{i<j} J/|i-j|^alpha (s+_i s-_j + h.c.)`` with open boundaries."""
    dim = 2**n
    H = np.zeros((dim, dim))
    idx = np.arange(dim)
    for i in range(n):
        for j in range(i + 1, n):
            bi, bj = (idx >> i) & 1, (idx >> j) & 1
            src = idx[bi != bj]
            H[src ^ ((1 << i) | (1 << j)), src] += J / (j - i) ** alpha
    return H


def make_xy_quench(n: int, alpha: float = 1.0, J: float = 1.0, t: float = 1.0,
                   initial: int | None = None,
                   max_qubits: int = DEFAULT_MAX_QUBITS) -> DenseState:
    """``exp(-iHt)|initial>`` for the long-range XY Hamiltonian.

    ``initial`` defaults to the Neel configuration; the all-zero state is an
    eigenstate of the excitation-conserving XY model and would not evolve.
    """
    check_size(n, max_qubits)
    start = neel_bits(n) if initial is None else int(initial)
    evals, evecs = np.linalg.eigh(xy_hamiltonian(n, alpha, J))
    psi = evecs @ (np.exp(-1j * evals * t) * evecs[start].conj())
    return DenseState(n, psi=psi / np.linalg.norm(psi))


def partial_trace(state: DenseState, keep) -> DenseState:
    """Reduced state on the qubits in ``keep``; kept qubit ``keep[j]`` (sorted) becomes qubit ``j``."""
    n = state.n_qubits
    keep = sorted(set(int(q) for q in keep))
    if not keep:
        raise ValueError("keep must name at least one qubit")
    if keep[0] < 0 or keep[-1] >= n:
        raise ValueError(f"keep {keep} out of range for {n} qubits")
    traced = [q for q in range(n) if q not in keep]
    k = len(keep)
    if not traced:
        return state
    if state.psi is not None:
        t = qubit_tensor(state.psi, n).transpose(keep + traced)
        m = t.reshape(2**k, -1)
        # rows of m are indexed big-endian over keep; convert to little-endian
        m = flat_vector(m.T.reshape((-1,) + (2,) * k), k).T
        rho = m @ m.conj().T
    else:
        t = state.rho.reshape((2,) * (2 * n))
        # row axis for qubit q is n-1-q, column axis is 2n-1-q
        letters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
        row = [letters[q] for q in range(n)]
        col = [letters[n + q] if q in keep else letters[q] for q in range(n)]
        sub_in = "".join(row[::-1] + col[::-1])
        sub_out = "".join([letters[q] for q in keep[::-1]] + [letters[n + q] for q in keep[::-1]])
        rho = np.einsum(f"{sub_in}->{sub_out}", t).reshape(2**k, 2**k)
    return DenseState(k, rho_matrix=0.5 * (rho + rho.conj().T))


def purity(state: DenseState) -> float:
    if state.psi is not None:
        return float(np.vdot(state.psi, state.psi).real ** 2)
    rho = state.rho
    return float(np.sum(np.abs(rho) ** 2))


def fidelity(a: DenseState, b: DenseState) -> float:
    """``<psi|rho|psi>`` when either argument is a statevector, Uhlmann fidelity otherwise."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if a.psi is not None and b.psi is not None:
        return float(abs(np.vdot(a.psi, b.psi)) ** 2)
    if a.psi is not None or b.psi is not None:
        pure, mixed = (a, b) if a.psi is not None else (b, a)
        return float(np.clip(np.vdot(pure.psi, mixed.rho @ pure.psi).real, 0.0, 1.0))
    w, v = np.linalg.eigh(a.rho)
    sq = (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T
    ev = np.linalg.eigvalsh(sq @ b.rho @ sq)
    return float(np.clip(np.sum(np.sqrt(np.clip(ev, 0, None))) ** 2, 0.0, 1.0))


def save_state(state: DenseState, path) -> None:
    """Binary layout: 16-byte header (magic, version, n_qubits, pure flag) + complex128 data."""
    pure = state.psi is not None
    data = state.psi if pure else state.rho
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, state.n_qubits, int(pure)))
        fh.write(np.ascontiguousarray(data, dtype="<c16").tobytes())


def load_state(path, max_qubits: int = DEFAULT_MAX_QUBITS) -> DenseState:
    raw = Path(path).read_bytes()
    magic, version, n, pure = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a state file")
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported state file version {version}")
    check_size(n, max_qubits)
    data = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size).astype(complex)
    if pure:
        return DenseState(n, psi=data)
    return DenseState(n, rho_matrix=data.reshape(2**n, 2**n))


def state_from_spec(spec, max_qubits: int = DEFAULT_MAX_QUBITS) -> DenseState:
    """Build a state from a JSON-style mapping (or JSON string).

    Recognized kinds: ``product``, ``ghz``, ``haar`` (needs ``seed``),
    ``mixed``, ``xy_quench`` (``alpha``, ``J``, ``t``) and ``file`` (``path``).
    An optional ``keep`` list traces out the remaining qubits afterwards.
    """
    if isinstance(spec, str):
        spec = json.loads(spec)
    kind = spec.get("kind")
    n = spec.get("n")
    if kind == "product":
        st = make_product(n, max_qubits)
    elif kind == "ghz":
        st = make_ghz(n, max_qubits)
    elif kind == "haar":
        st = make_haar_random_pure(n, np.random.default_rng(spec.get("seed", 0)), max_qubits)
    elif kind == "mixed":
        st = make_maximally_mixed(n, max_qubits)
    elif kind == "xy_quench":
        st = make_xy_quench(n, spec.get("alpha", 1.0), spec.get("J", 1.0), spec.get("t", 1.0),
                            spec.get("initial"), max_qubits)
    elif kind == "file":
        st = load_state(spec["path"], max_qubits)
    else:
        raise ValueError(f"unknown state kind {kind!r}")
    if spec.get("keep") is not None:
        st = partial_trace(st, spec["keep"])
    return st
