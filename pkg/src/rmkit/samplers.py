"""Importance sampling of local unitaries.

A sampler model supplies a non-negative weight ``X_IS(u)`` over unitary
angles.  Unitaries are drawn from ``p_IS = X_IS / Z`` with a Metropolis
chain whose proposals are uniform Haar draws, and the purity is estimated as
the occurrence-weighted mean of ``X_e(u) / p_IS(u)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .measurement import outcome_probabilities, sample_counts, x_estimate_counts, x_from_probs
from .mlp import MLPModel, angles_to_inputs
from .mps import MPSState, mps_probabilities_batch, mps_reduced_state
from .states import DenseState, purity
from .unitaries import UnitaryAngles, sample_haar_batch

FLOOR_EPSILON = 1e-12
DEFAULT_BURN_IN = 50
DEFAULT_NORMALIZATION_SAMPLES = 100_000


class SamplerModel:
    """Base class: subclasses implement :meth:`raw_weights` on angle arrays."""

    backend = "base"

    def __init__(self, n_qubits: int, normalization: float | None = None,
                 normalization_stderr: float = 0.0):
        self.n_qubits = int(n_qubits)
        self.normalization = normalization
        self.normalization_stderr = float(normalization_stderr)

    def raw_weights(self, xi: np.ndarray, phi: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def weights(self, xi, phi) -> np.ndarray:
        """Clamped weights for angle arrays of shape ``(B, N)``."""
        xi = np.atleast_2d(xi)
        phi = np.atleast_2d(phi)
        if xi.shape[-1] != self.n_qubits:
            raise ValueError(f"model has {self.n_qubits} qubits, angles have {xi.shape[-1]}")
        w = np.asarray(self.raw_weights(xi, phi), dtype=float)
        return np.maximum(w, FLOOR_EPSILON)

    def evaluate(self, angles: UnitaryAngles) -> float:
        return float(self.weights(angles.xi[None, :], angles.phi[None, :])[0])

    def scaled(self, factor: float) -> "ScaledSampler":
        return ScaledSampler(self, factor)

    def __repr__(self):
        return f"{type(self).__name__}(n_qubits={self.n_qubits}, Z={self.normalization})"


class UniformSampler(SamplerModel):
    backend = "uniform"

    def __init__(self, n_qubits: int):
        super().__init__(n_qubits, 1.0, 0.0)

    def raw_weights(self, xi, phi):
        return np.ones(xi.shape[0])


class ExactSampler(SamplerModel):
    """``X_IS = X`` of a known state; its Haar integral is the state's purity."""

    backend = "exact"

    def __init__(self, state: DenseState):
        super().__init__(state.n_qubits, purity(state), 0.0)
        self.state = state

    def raw_weights(self, xi, phi):
        return x_from_probs(outcome_probabilities(self.state, xi, phi), self.n_qubits)


class MLPSampler(SamplerModel):
    """Neural-network fit of ``X``; normalization must come from :func:`estimate_normalization`."""

    backend = "mlp"

    def __init__(self, model: MLPModel, normalization: float | None = None,
                 normalization_stderr: float = 0.0):
        if model.layer_widths[0] % 2:
            raise ValueError("MLP input width must be 2N")
        super().__init__(model.layer_widths[0] // 2, normalization, normalization_stderr)
        self.model = model

    def raw_weights(self, xi, phi):
        return self.model.forward(angles_to_inputs(xi, phi))


class MPSSampler(SamplerModel):
    """``X`` evaluated on an MPS approximation, optionally reduced to ``keep``.

    With ``keep`` the weights come from ``Tr_B |psi_D><psi_D|``; the Haar
    integral of either form is the purity of the represented state.
    """

    backend = "mps"

    def __init__(self, mps: MPSState, keep=None):
        self.mps = mps
        self.keep = None if keep is None else sorted(int(q) for q in keep)
        if self.keep is None:
            self._reduced = None
            super().__init__(mps.n_sites, 1.0, 0.0)
        else:
            self._reduced = mps_reduced_state(mps, self.keep)
            super().__init__(len(self.keep), purity(self._reduced), 0.0)

    def raw_weights(self, xi, phi):
        if self._reduced is None:
            p = mps_probabilities_batch(self.mps, xi, phi)
        else:
            p = outcome_probabilities(self._reduced, xi, phi)
        return x_from_probs(p, self.n_qubits)


class ScaledSampler(SamplerModel):
    def __init__(self, base: SamplerModel, factor: float):
        if factor <= 0:
            raise ValueError("scale factor must be positive")
        z = None if base.normalization is None else base.normalization * factor
        super().__init__(base.n_qubits, z, base.normalization_stderr * factor)
        self.base = base
        self.factor = float(factor)
        self.backend = base.backend

    def raw_weights(self, xi, phi):
        return self.factor * self.base.weights(xi, phi)


def estimate_normalization(model: SamplerModel, n_samples: int = DEFAULT_NORMALIZATION_SAMPLES,
                           rng: np.random.Generator | None = None) -> tuple[float, float]:
    """Uniform Monte Carlo estimate of ``Z = int X_IS du`` with its standard error."""
    if isinstance(model, UniformSampler):
        return 1.0, 0.0
    if n_samples < 100:
        raise ValueError("n_samples must be >= 100")
    rng = np.random.default_rng() if rng is None else rng
    vals = []
    step = 20_000
    for lo in range(0, n_samples, step):
        xi, phi = sample_haar_batch(model.n_qubits, min(step, n_samples - lo), rng)
        vals.append(model.weights(xi, phi))
    vals = np.concatenate(vals)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size))


def calibrate(model: SamplerModel, n_samples: int = DEFAULT_NORMALIZATION_SAMPLES,
              rng: np.random.Generator | None = None) -> SamplerModel:
    """Set ``model.normalization`` from a Monte Carlo estimate and return the model."""
    z, se = estimate_normalization(model, n_samples, rng)
    model.normalization, model.normalization_stderr = z, se
    return model


@dataclass
class MetropolisChain:
    """Distinct retained unitaries with their occurrence counts."""

    xi: np.ndarray
    phi: np.ndarray
    counts: np.ndarray
    weights: np.ndarray
    burn_in: int
    acceptance_rate: float
    n_steps: int = 0

    @property
    def n_samples(self) -> int:
        return int(self.counts.sum())

    @property
    def n_distinct(self) -> int:
        return int(self.counts.size)

    @property
    def n_qubits(self) -> int:
        return int(self.xi.shape[1])

    def angles(self, r: int) -> UnitaryAngles:
        return UnitaryAngles(self.xi[r], self.phi[r])

    def expanded_xi(self) -> np.ndarray:
        """Retained samples with repeats, in chain order."""
        return np.repeat(self.xi, self.counts, axis=0)

    def to_json(self) -> str:
        return json.dumps({
            "angles": [self.angles(r).to_vector() for r in range(self.n_distinct)],
            "counts": self.counts.tolist(),
            "weights": self.weights.tolist(),
            "burn_in": self.burn_in,
            "n_steps": self.n_steps,
            "acceptance_rate": self.acceptance_rate,
        })

    @classmethod
    def from_json(cls, text: str) -> "MetropolisChain":
        d = json.loads(text)
        angles = [UnitaryAngles.from_vector(v) for v in d["angles"]]
        return cls(np.array([a.xi for a in angles]), np.array([a.phi for a in angles]),
                   np.asarray(d["counts"], dtype=np.int64), np.asarray(d["weights"], dtype=float),
                   int(d["burn_in"]), float(d["acceptance_rate"]), int(d.get("n_steps", 0)))


def metropolis_sample(model: SamplerModel, n_total: int, burn_in: int = DEFAULT_BURN_IN,
                      rng: np.random.Generator | None = None,
                      proposal: str = "independent") -> MetropolisChain:
    """Run ``n_total`` Metropolis steps targeting ``X_IS`` relative to the Haar measure.

    ``proposal="independent"`` redraws all ``2N`` angles each step, so every
    proposal weight can be evaluated up front in one batch.
    ``proposal="single_qubit"`` redraws the angles of one random qubit.
    The first ``burn_in`` steps are discarded.
    """
    if n_total < 1 or burn_in < 0:
        raise ValueError("need n_total >= 1 and burn_in >= 0")
    if burn_in >= n_total:
        raise ValueError("burn_in must be smaller than n_total")
    rng = np.random.default_rng() if rng is None else rng
    n = model.n_qubits
    if proposal == "independent":
        xi, phi = sample_haar_batch(n, n_total + 1, rng)
        w = model.weights(xi, phi)
        u = rng.random(n_total)
        if np.all(w == w[0]):
            # constant weight: u < 1 accepts every proposal
            idx = np.arange(1, n_total + 1)
            accepted = n_total
        else:
            idx = np.empty(n_total, dtype=np.int64)
            cur, accepted = 0, 0
            for step in range(n_total):
                cand = step + 1
                if u[step] * w[cur] < w[cand]:
                    cur = cand
                    accepted += 1
                idx[step] = cur
        kept = idx[burn_in:]
        starts = np.flatnonzero(np.r_[True, kept[1:] != kept[:-1]])
        sel = kept[starts]
        counts = np.diff(np.r_[starts, kept.size])
        return MetropolisChain(xi[sel], phi[sel], counts, w[sel], burn_in,
                               accepted / n_total, n_total)
    if proposal == "single_qubit":
        xi0, phi0 = sample_haar_batch(n, 1, rng)
        cur_xi, cur_phi = xi0[0].copy(), phi0[0].copy()
        cur_w = model.weights(cur_xi, cur_phi)[0]
        states, accepted = [], 0
        for step in range(n_total):
            q = rng.integers(n)
            nxi, nphi = sample_haar_batch(1, 1, rng)
            cand_xi, cand_phi = cur_xi.copy(), cur_phi.copy()
            cand_xi[q], cand_phi[q] = nxi[0, 0], nphi[0, 0]
            cand_w = model.weights(cand_xi, cand_phi)[0]
            if rng.random() * cur_w < cand_w:
                cur_xi, cur_phi, cur_w = cand_xi, cand_phi, cand_w
                accepted += 1
            if step >= burn_in:
                if states and states[-1][0] is cur_xi:
                    states[-1][3] += 1
                else:
                    states.append([cur_xi, cur_phi, cur_w, 1])
        return MetropolisChain(np.array([s[0] for s in states]), np.array([s[1] for s in states]),
                               np.array([s[3] for s in states], dtype=np.int64),
                               np.array([s[2] for s in states]), burn_in,
                               accepted / n_total, n_total)
    raise ValueError(f"unknown proposal {proposal!r}")


class SimulatedMeasurements:
    """``N_M`` simulated shots per unitary on ``state``, reduced to X_e."""

    def __init__(self, state: DenseState, n_shots: int):
        if n_shots < 2:
            raise ValueError("n_shots must be >= 2")
        self.state = state
        self.n_shots = int(n_shots)

    @property
    def n_qubits(self) -> int:
        return self.state.n_qubits

    def x_values(self, xi, phi, rng: np.random.Generator) -> np.ndarray:
        p = outcome_probabilities(self.state, xi, phi)
        return x_estimate_counts(sample_counts(p, self.n_shots, rng), self.n_qubits)


class ExactLimit:
    """The ``N_M -> infinity`` limit: exact ``X(u)`` of ``state``."""

    n_shots = None

    def __init__(self, state: DenseState):
        self.state = state

    @property
    def n_qubits(self) -> int:
        return self.state.n_qubits

    def x_values(self, xi, phi, rng=None) -> np.ndarray:
        return x_from_probs(outcome_probabilities(self.state, xi, phi), self.n_qubits)


@dataclass
class PurityEstimate:
    p2_hat: float
    stderr: float
    n_u: int
    n_s: int
    n_m: int | None
    log_base: float = math.e
    ratios: np.ndarray = field(default=None, repr=False)

    @property
    def renyi2_valid(self) -> bool:
        return self.p2_hat > 0

    @property
    def renyi2(self) -> float:
        """``-log(p2_hat)``; NaN when the estimate is not positive."""
        if not self.renyi2_valid:
            return float("nan")
        return -math.log(self.p2_hat) / math.log(self.log_base)

    def to_dict(self) -> dict:
        return {"p2_hat": self.p2_hat, "stderr": self.stderr,
                "renyi2": self.renyi2 if self.renyi2_valid else None,
                "renyi2_valid": self.renyi2_valid, "n_u": self.n_u, "n_s": self.n_s,
                "n_m": self.n_m}


def estimate_purity_is(model: SamplerModel, chain: MetropolisChain, source,
                       rng: np.random.Generator | None = None,
                       log_base: float = math.e) -> PurityEstimate:
    """Occurrence-weighted importance-sampling estimate of the purity.

    Each distinct unitary is measured once (``source.x_values``) and enters
    with weight ``n_r``.  The standard error folds the normalization's
    uncertainty in quadrature.
    """
    if chain.n_distinct == 0:
        raise ValueError("empty chain")
    if model.normalization is None:
        raise ValueError("model has no normalization; call calibrate() first")
    if source.n_qubits != model.n_qubits:
        raise ValueError("measurement source and model act on different qubit counts")
    z = model.normalization
    w = model.weights(chain.xi, chain.phi)
    x = source.x_values(chain.xi, chain.phi, rng)
    ratios = z * (x / w)
    n = chain.counts
    ns = int(n.sum())
    dev = ratios - ratios[0]
    shift = float(np.dot(n, dev)) / ns
    p2 = float(ratios[0] + shift)
    var = float(np.dot(n, (dev - shift) ** 2)) / (ns - 1) if ns > 1 else 0.0
    se = math.sqrt(var / ns)
    if model.normalization_stderr > 0:
        se = math.hypot(se, p2 * model.normalization_stderr / z)
    return PurityEstimate(p2, se, chain.n_distinct, ns, source.n_shots, log_base, ratios)
