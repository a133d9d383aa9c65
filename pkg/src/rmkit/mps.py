"""Matrix product states built by SVD compression of exact statevectors.

Site ``i`` is qubit ``i``; tensors have legs ``(left bond, physical, right bond)``
with unit boundary bonds.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np

from .measurement import OutcomeDistribution, x_from_probs
from .states import DenseState, ResourceLimitError, flat_vector, purity, qubit_tensor
from .unitaries import UnitaryAngles, unitary_matrices

MAX_REDUCED_QUBITS = 12
_MAX_ENV_ENTRIES = 2**26


@dataclass
class MPSState:
    tensors: list
    max_bond: int
    discarded_weight: list = field(default_factory=list)

    def __post_init__(self):
        if not self.tensors:
            raise ValueError("MPS needs at least one site")
        if self.tensors[0].shape[0] != 1 or self.tensors[-1].shape[2] != 1:
            raise ValueError("boundary bonds must have dimension 1")
        for i, (a, b) in enumerate(zip(self.tensors[:-1], self.tensors[1:])):
            if a.shape[2] != b.shape[0]:
                raise ValueError(f"bond {i} dimensions disagree: {a.shape[2]} vs {b.shape[0]}")
        for i, a in enumerate(self.tensors):
            if a.ndim != 3 or a.shape[1] != 2:
                raise ValueError(f"site {i} tensor must have shape (l, 2, r)")
        if max(self.bond_dims, default=1) > self.max_bond:
            raise ValueError("a bond exceeds max_bond")

    @property
    def n_sites(self) -> int:
        return len(self.tensors)

    @property
    def bond_dims(self) -> list:
        return [a.shape[2] for a in self.tensors[:-1]]

    def norm(self) -> float:
        env = np.ones((1, 1), dtype=complex)
        for a in self.tensors:
            env = np.einsum("ab,asc,bsd->cd", env, a, a.conj())
        return float(np.sqrt(env[0, 0].real))

    def to_json(self) -> str:
        def blob(a):
            return base64.b64encode(np.ascontiguousarray(a, dtype="<c16").tobytes()).decode()

        return json.dumps({
            "format": "rmkit-mps",
            "n_sites": self.n_sites,
            "max_bond": self.max_bond,
            "bond_dims": self.bond_dims,
            "discarded_weight": list(self.discarded_weight),
            "dtype": "<c16",
            "tensors": [{"shape": list(a.shape), "data": blob(a)} for a in self.tensors],
        })

    @classmethod
    def from_json(cls, text: str) -> "MPSState":
        d = json.loads(text)
        tensors = [np.frombuffer(base64.b64decode(t["data"]), dtype="<c16")
                   .astype(complex).reshape(t["shape"]) for t in d["tensors"]]
        return cls(tensors, int(d["max_bond"]), list(d.get("discarded_weight", [])))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "MPSState":
        with open(path) as fh:
            return cls.from_json(fh.read())


def compress(state: DenseState, max_bond: int):
    """Left-to-right truncated SVDs keeping the ``max_bond`` largest singular values.

    Returns ``(mps, fidelity)`` with ``fidelity = |<psi_D|psi>|^2`` after
    renormalization.
    """
    if state.psi is None:
        raise ValueError("compress needs a pure statevector")
    if max_bond < 1:
        raise ValueError("max_bond must be >= 1")
    n = state.n_qubits
    rest = qubit_tensor(state.psi, n).reshape(1, -1)
    tensors, discarded = [], []
    for i in range(n - 1):
        left = rest.shape[0]
        m = rest.reshape(left * 2, -1)
        u, s, vh = np.linalg.svd(m, full_matrices=False)
        k = min(max_bond, int(np.count_nonzero(s > 0)) or 1)
        discarded.append(float(np.sum(s[k:] ** 2)))
        tensors.append(u[:, :k].reshape(left, 2, k))
        rest = s[:k, None] * vh[:k]
    last = rest.reshape(rest.shape[0], 2, 1)
    tensors.append(last / np.linalg.norm(last))
    mps = MPSState(tensors, max_bond, discarded)
    return mps, float(abs(np.vdot(to_statevector(mps), state.psi)) ** 2)


def to_statevector(mps: MPSState) -> np.ndarray:
    """Dense amplitudes with qubit ``i`` as bit ``i`` of the index."""
    t = np.ones((1, 1), dtype=complex)
    for a in mps.tensors:
        t = np.einsum("pl,lsr->psr", t, a).reshape(-1, a.shape[2])
    # t is indexed big-endian over sites 0..N-1
    n = mps.n_sites
    return flat_vector(t.reshape((2,) * n), n)


def is_left_canonical(mps: MPSState, tol: float = 1e-10) -> bool:
    """All sites but the last satisfy ``sum_{l,s} A*[l,s,r] A[l,s,r'] = delta``."""
    for a in mps.tensors[:-1]:
        m = a.reshape(-1, a.shape[2])
        if np.max(np.abs(m.conj().T @ m - np.eye(a.shape[2]))) > tol:
            return False
    return True


def _check_angles(mps: MPSState, xi):
    if xi.shape[-1] != mps.n_sites:
        raise ValueError(f"angles act on {xi.shape[-1]} qubits, MPS has {mps.n_sites}")


def mps_probabilities_batch(mps: MPSState, xi, phi) -> np.ndarray:
    """``|<s| (x) u_i |psi_D>|^2`` for every bitstring, for a batch of angle sets."""
    xi = np.atleast_2d(xi)
    phi = np.atleast_2d(phi)
    _check_angles(mps, xi)
    mats = unitary_matrices(xi, phi)
    B = xi.shape[0]
    t = np.ones((B, 1, 1), dtype=complex)
    for i, a in enumerate(mps.tensors):
        rot = np.einsum("bst,ltr->blsr", mats[:, i], a)
        # new index = s * 2^i + prefix, so qubit i lands on bit i
        t = np.einsum("bpl,blsr->bspr", t, rot).reshape(B, -1, a.shape[2])
    return np.abs(t[:, :, 0]) ** 2


def mps_distribution(mps: MPSState, angles: UnitaryAngles) -> OutcomeDistribution:
    p = mps_probabilities_batch(mps, angles.xi, angles.phi)[0]
    return OutcomeDistribution(p / p.sum())


def mps_probability(mps: MPSState, angles: UnitaryAngles, bitstring: int) -> float:
    _check_angles(mps, angles.xi[None, :])
    if not 0 <= bitstring < 2**mps.n_sites:
        raise ValueError("bitstring out of range")
    mats = unitary_matrices(angles.xi, angles.phi)
    v = np.ones(1, dtype=complex)
    for i, a in enumerate(mps.tensors):
        s = (bitstring >> i) & 1
        v = v @ np.einsum("t,ltr->lr", mats[i][s], a)
    return float(abs(v[0]) ** 2)


def mps_x(mps: MPSState, angles: UnitaryAngles) -> float:
    return float(x_from_probs(mps_probabilities_batch(mps, angles.xi, angles.phi), mps.n_sites)[0])


def mps_reduced_state(mps: MPSState, keep) -> DenseState:
    """``Tr_B |psi_D><psi_D|`` on ``keep``, contracted site by site without forming the full vector."""
    keep = sorted(set(int(q) for q in keep))
    if not keep or keep[0] < 0 or keep[-1] >= mps.n_sites:
        raise ValueError(f"invalid keep {keep} for {mps.n_sites} sites")
    if len(keep) > MAX_REDUCED_QUBITS:
        raise ResourceLimitError(f"reduced subsystem of {len(keep)} qubits exceeds "
                                 f"{MAX_REDUCED_QUBITS}")
    if 4 ** len(keep) * max(mps.bond_dims + [1]) ** 2 > _MAX_ENV_ENTRIES:
        raise ResourceLimitError("reduced-state contraction too large")
    # env[a, r, a', r']: kept ket index, ket bond, kept bra index, bra bond
    env = np.ones((1, 1, 1, 1), dtype=complex)
    kept = set(keep)
    for i, a in enumerate(mps.tensors):
        if i in kept:
            env = np.einsum("xlym,lsr,mtu->sxrtyu", env, a, a.conj())
            d, r = env.shape[0] * env.shape[1], env.shape[2]
            env = env.reshape(d, r, d, r)
        else:
            env = np.einsum("xlym,lsr,msu->xryu", env, a, a.conj())
    k = len(keep)
    rho = env[:, 0, :, 0]
    rho = rho / np.trace(rho).real
    return DenseState(k, rho_matrix=0.5 * (rho + rho.conj().T))


def mps_reduced_purity(mps: MPSState, keep) -> float:
    return purity(mps_reduced_state(mps, keep))
