"""Local Haar-random unitaries in the (xi, phi) parametrization.

Each single-qubit unitary is ``u = R_y(theta) R_z(phi)`` with
``theta = 2 arcsin(sqrt(xi))``.  Drawing ``xi`` uniformly on ``[0, 1]`` and
``phi`` uniformly on ``[0, 2 pi)`` reproduces the Haar measure for
computational-basis measurements (the trailing ``R_z`` is irrelevant there).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class UnitaryAngles:
    """Angles of a product ``u_1 x ... x u_N`` of single-qubit unitaries."""

    xi: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float).reshape(-1)
        phi = np.mod(np.asarray(self.phi, dtype=float).reshape(-1), TWO_PI)
        if xi.size == 0:
            raise ValueError("UnitaryAngles needs at least one qubit")
        if xi.shape != phi.shape:
            raise ValueError(f"xi and phi lengths differ: {xi.size} != {phi.size}")
        if np.any(xi < 0.0) or np.any(xi > 1.0) or not np.all(np.isfinite(xi)):
            raise ValueError("xi values must lie in [0, 1]")
        # mod can return exactly 2 pi for tiny negative inputs
        phi[phi >= TWO_PI] = 0.0
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "phi", phi)

    @property
    def n_qubits(self) -> int:
        return int(self.xi.size)

    @property
    def theta(self) -> np.ndarray:
        return 2.0 * np.arcsin(np.sqrt(self.xi))

    def to_vector(self) -> list[float]:
        """Flat ``[xi_1, phi_1, ..., xi_N, phi_N]`` list (JSON form)."""
        return np.column_stack([self.xi, self.phi]).reshape(-1).tolist()

    @classmethod
    def from_vector(cls, values) -> "UnitaryAngles":
        v = np.asarray(values, dtype=float)
        if v.ndim != 1 or v.size % 2 or v.size == 0:
            raise ValueError("angle vector must have even, nonzero length")
        return cls(v[0::2], v[1::2])

    def __eq__(self, other):
        if not isinstance(other, UnitaryAngles):
            return NotImplemented
        return np.array_equal(self.xi, other.xi) and np.array_equal(self.phi, other.phi)

    def __hash__(self):
        return hash((self.xi.tobytes(), self.phi.tobytes()))


def sample_haar_angles(n_qubits: int, rng: np.random.Generator) -> UnitaryAngles:
    if n_qubits < 1:
        raise ValueError(f"n_qubits must be >= 1, got {n_qubits}")
    xi, phi = sample_haar_batch(n_qubits, 1, rng)
    return UnitaryAngles(xi[0], phi[0])


def sample_haar_batch(n_qubits: int, size: int, rng: np.random.Generator):
    """Draw ``size`` Haar-random angle sets as two ``(size, n_qubits)`` arrays."""
    if n_qubits < 1:
        raise ValueError(f"n_qubits must be >= 1, got {n_qubits}")
    draws = rng.random((size, n_qubits, 2))
    return draws[..., 0], TWO_PI * draws[..., 1]


def rotation_y(theta) -> np.ndarray:
    c, s = np.cos(np.asarray(theta) / 2), np.sin(np.asarray(theta) / 2)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2).astype(complex)


def rotation_z(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    zero = np.zeros_like(phi)
    e = np.exp(-0.5j * phi)
    return np.stack([np.stack([e, zero], -1), np.stack([zero, np.conj(e)], -1)], -2)


def unitary_matrices(xi, phi) -> np.ndarray:
    """Return ``R_y(theta) R_z(phi)`` for arrays of angles; output shape ``xi.shape + (2, 2)``.

    Built from the closed form rather than a matrix product:
    ``[[c e^{-i phi/2}, -s e^{i phi/2}], [s e^{-i phi/2}, c e^{i phi/2}]]``
    with ``c = sqrt(1 - xi)``, ``s = sqrt(xi)``.
    """
    xi = np.asarray(xi, dtype=float)
    phi = np.asarray(phi, dtype=float)
    c = np.sqrt(np.clip(1.0 - xi, 0.0, 1.0))
    s = np.sqrt(np.clip(xi, 0.0, 1.0))
    e = np.exp(-0.5j * phi)
    ec = np.conj(e)
    out = np.empty(xi.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = c * e
    out[..., 0, 1] = -s * ec
    out[..., 1, 0] = s * e
    out[..., 1, 1] = c * ec
    return out


def build_unitaries(angles: UnitaryAngles) -> list[np.ndarray]:
    mats = unitary_matrices(angles.xi, angles.phi)
    return [mats[i] for i in range(angles.n_qubits)]


def kron_all(mats) -> np.ndarray:
    """Full ``2^N x 2^N`` matrix of ``u_{N-1} x ... x u_0``.

    Qubit ``i`` is bit ``i`` (weight ``2^i``) of the basis index, so the
    highest qubit is the leftmost Kronecker factor.
    """
    out = np.ones((1, 1), dtype=complex)
    for m in reversed(list(mats)):
        out = np.kron(out, m)
    return out
