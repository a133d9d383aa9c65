"""Variance of the importance-sampled purity estimator and budget planning.

The estimator variance for ``N_u`` unitaries and ``N_M`` shots each is

    Var = (c4(N_M) G4 + c3(N_M) G3 + c2(N_M) G2 - p2^2) / N_u

with ``c4 = (N_M-3)(N_M-2)/(N_M(N_M-1))``, ``c3 = 4(N_M-2)/(N_M(N_M-1))`` and
``c2 = 2/(N_M(N_M-1))``.  The ``G_k`` are k-copy moments of the rotated
state divided by the squared sampling density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product as iproduct

import numpy as np
from scipy import integrate

from .measurement import hamming, kernel_apply, outcome_probabilities
from .samplers import MetropolisChain, SamplerModel, metropolis_sample
from .states import DenseState, ResourceLimitError
from .unitaries import sample_haar_batch

ALPHA = 2.5 - 2 * math.pi / (3 * math.sqrt(3))
BETA = 1 + 4 * math.pi / (3 * math.sqrt(3))
MAX_BRUTE_FORCE_QUBITS = 4


@dataclass
class VarianceReport:
    gamma2: float
    gamma3: float
    gamma4: float
    p2: float
    n_u: int
    n_m: int
    variance: float

    @property
    def std(self) -> float:
        return math.sqrt(max(self.variance, 0.0))

    @property
    def mean_abs_error(self) -> float:
        """Mean absolute error of a normal estimator with this variance."""
        return self.std / math.sqrt(math.pi / 2)


@dataclass
class BudgetPlan:
    epsilon: float
    n_u: int
    n_m: int

    @property
    def total(self) -> int:
        return self.n_u * self.n_m


def gamma_closed_form(kind: str, n_qubits: int, d: int = 2):
    """``(G2, G3, G4)`` for pure product states under uniform or perfect sampling."""
    if n_qubits < 1:
        raise ValueError("n_qubits must be >= 1")
    if d < 2:
        raise ValueError("local dimension must be >= 2")
    N = n_qubits
    if kind == "uniform":
        return ((2 * d - 1) ** N,
                (3 * d / (2 + d)) ** N,
                ((d * d + 9 * d + 2) / (d * d + 5 * d + 6)) ** N)
    if kind == "perfect":
        if d != 2:
            raise NotImplementedError("perfect-sampler moments are only known for qubits")
        return BETA**N, ALPHA**N, 1.0
    raise ValueError(f"unknown kind {kind!r}")


_INTEGRANDS = {
    "uniform": (1 / 8, (lambda z: 10 + 6 * z * z,
                        lambda z: 1 + 15 * z * z,
                        lambda z: (1 + 3 * z * z) ** 2)),
    "perfect": (1 / 4, (lambda z: (10 + 6 * z * z) / (1 + 3 * z * z),
                        lambda z: (1 + 15 * z * z) / (1 + 3 * z * z),
                        lambda z: 1 + 3 * z * z)),
}


def gamma_quadrature(kind: str, n_qubits: int):
    """Single-qubit integrals over ``z = 1 - 2 xi`` raised to the power ``N``."""
    if kind not in _INTEGRANDS:
        raise ValueError(f"unknown kind {kind!r}")
    pref, funcs = _INTEGRANDS[kind]
    vals = [pref * integrate.quad(f, -1.0, 1.0, epsabs=0, epsrel=1e-13)[0] for f in funcs]
    return tuple(v**n_qubits for v in vals)


def k_copy_traces(p: np.ndarray, n: int):
    """``Tr(A_k rho_u^{(x)k})`` for k = 2, 3, 4 from outcome probabilities (last axis).

    With ``K(s,s') = 2^N (-2)^{-D[s,s']}``:
    k=2 is ``sum K^2 P P``, k=3 is ``sum_{s2} P(s2) (K P)(s2)^2`` and k=4 is ``X^2``.
    """
    kp = 2.0**n * kernel_apply(p, n)
    x = np.sum(p * kp, axis=-1)
    t3 = np.sum(p * kp * kp, axis=-1)
    # K(s,s')^2 = 4^N prod_i [[1, 1/4], [1/4, 1]]
    q = np.asarray(p, dtype=float)
    lead = q.shape[:-1]
    for i in range(n):
        t = q.reshape(lead + (2 ** (n - 1 - i), 2, 2**i))
        q = (t + 0.25 * t[..., ::-1, :]).reshape(lead + (2**n,))
    t2 = 4.0**n * np.sum(p * q, axis=-1)
    return t2, t3, x * x


def k_copy_traces_bruteforce(p: np.ndarray, n: int):
    """Enumerate k-tuples of bitstrings; a test oracle for :func:`k_copy_traces`."""
    if n > MAX_BRUTE_FORCE_QUBITS:
        raise ResourceLimitError(f"4-copy enumeration limited to N <= {MAX_BRUTE_FORCE_QUBITS}")
    p = np.asarray(p, dtype=float)
    s = np.arange(2**n)
    K = 2.0**n * (-2.0) ** (-hamming(s[:, None], s[None, :]))
    t2 = t3 = t4 = 0.0
    for s1, s2 in iproduct(range(2**n), repeat=2):
        t2 += K[s1, s2] ** 2 * p[s1] * p[s2]
        for s3 in range(2**n):
            t3 += K[s1, s2] * K[s2, s3] * p[s1] * p[s2] * p[s3]
            for s4 in range(2**n):
                t4 += K[s1, s2] * K[s3, s4] * p[s1] * p[s2] * p[s3] * p[s4]
    return t2, t3, t4


def product_state_traces(z: np.ndarray):
    """Per-qubit factorized k-copy traces for ``|0...0>``; ``z = 1 - 2 xi`` with shape ``(B, N)``."""
    z2 = np.atleast_2d(z) ** 2
    n = z2.shape[1]
    return (np.prod(10 + 6 * z2, axis=1) / 4.0**n,
            np.prod(1 + 15 * z2, axis=1) / 4.0**n,
            np.prod((1 + 3 * z2) ** 2, axis=1) / 4.0**n)


def gamma_monte_carlo(state: DenseState, model: SamplerModel, n_samples: int,
                      rng: np.random.Generator | None = None, method: str = "model",
                      burn_in: int = 50, n_batches: int = 50,
                      max_qubits: int = 10):
    """Monte Carlo ``(G2, G3, G4)`` and their standard errors.

    ``method="model"`` averages ``Tr(A_k rho_u^{(x)k}) / p_IS(u)^2`` over a
    Metropolis chain drawn from the model (batch-means errors);
    ``method="haar"`` averages ``Tr(A_k rho_u^{(x)k}) / p_IS(u)`` over i.i.d.
    Haar draws.  Both estimate the same integral.
    """
    n = state.n_qubits
    if n != model.n_qubits:
        raise ValueError("state and model act on different qubit counts")
    if n > max_qubits:
        raise ResourceLimitError(f"gamma_monte_carlo limited to N <= {max_qubits}")
    if model.normalization is None:
        raise ValueError("model has no normalization")
    rng = np.random.default_rng() if rng is None else rng
    z = model.normalization
    if method == "model":
        chain = metropolis_sample(model, n_samples + burn_in, burn_in, rng)
        xi = np.repeat(chain.xi, chain.counts, axis=0)
        phi = np.repeat(chain.phi, chain.counts, axis=0)
        p_is = model.weights(xi, phi) / z
        terms = np.stack(k_copy_traces(outcome_probabilities(state, xi, phi), n)) / p_is**2
        usable = (terms.shape[1] // n_batches) * n_batches
        means = terms[:, :usable].reshape(3, n_batches, -1).mean(axis=2)
        est = terms.mean(axis=1)
        err = means.std(axis=1, ddof=1) / math.sqrt(n_batches)
    elif method == "haar":
        xi, phi = sample_haar_batch(n, n_samples, rng)
        p_is = model.weights(xi, phi) / z
        terms = np.stack(k_copy_traces(outcome_probabilities(state, xi, phi), n)) / p_is
        est = terms.mean(axis=1)
        err = terms.std(axis=1, ddof=1) / math.sqrt(n_samples)
    else:
        raise ValueError(f"unknown method {method!r}")
    return tuple(float(v) for v in est), tuple(float(v) for v in err)


def prop1_coefficients(n_m):
    """``(c2, c3, c4)``; they sum to 1 for every ``n_m >= 2``."""
    n = np.asarray(n_m, dtype=float)
    den = n * (n - 1)
    return 2 / den, 4 * (n - 2) / den, (n - 3) * (n - 2) / den


def variance_factor(gammas, p2: float, n_m):
    """Bracketed single-unitary variance, i.e. ``N_u * Var``."""
    g2, g3, g4 = gammas
    c2, c3, c4 = prop1_coefficients(n_m)
    return c4 * g4 + c3 * g3 + c2 * g2 - p2 * p2


def variance_prop1(gammas, p2: float, n_u: int, n_m: int) -> float:
    if n_m < 2:
        raise ValueError("n_m must be >= 2")
    if n_u < 1:
        raise ValueError("n_u must be >= 1")
    return float(variance_factor(gammas, p2, n_m)) / n_u


def variance_report(gammas, p2: float, n_u: int, n_m: int) -> VarianceReport:
    g2, g3, g4 = gammas
    return VarianceReport(g2, g3, g4, p2, n_u, n_m, variance_prop1(gammas, p2, n_u, n_m))


def required_budget(epsilon: float, gammas, p2: float, n_m_max: int = 10**6,
                    chunk: int = 10**6) -> BudgetPlan:
    """Smallest ``N_u N_M`` whose variance is at most ``(pi/2) epsilon^2``.

    Exhaustive over ``N_M`` in ``[2, n_m_max]``; the scan stops once ``N_M``
    alone exceeds the best total, since ``N_u >= 1``.  Ties go to smaller ``N_M``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    target = math.pi / 2 * epsilon**2
    best = None
    for lo in range(2, n_m_max + 1, chunk):
        if best is not None and lo >= best[0]:
            break
        nm = np.arange(lo, min(n_m_max, lo + chunk - 1) + 1, dtype=np.int64)
        f = variance_factor(gammas, p2, nm)
        nu = np.maximum(1, np.ceil(f / target)).astype(np.int64)
        tot = nu * nm
        i = int(np.argmin(tot))
        if best is None or tot[i] < best[0]:
            best = (int(tot[i]), int(nu[i]), int(nm[i]))
    return BudgetPlan(epsilon, best[1], best[2])


def fit_scaling(points):
    """Least-squares fit of ``log2(budget) = b + a N``; returns ``(a, b, rms_residual)``."""
    pts = [(float(N), float(t)) for N, t in points]
    if len({N for N, _ in pts}) < 2:
        raise ValueError("need at least two distinct N")
    N = np.array([p[0] for p in pts])
    y = np.log2([p[1] for p in pts])
    A = np.column_stack([N, np.ones_like(N)])
    (a, b), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (a * N + b)
    return float(a), float(b), float(np.sqrt(np.mean(resid**2)))


def fit_breakpoint(points):
    """Two-segment fit with one breakpoint; returns ``(N_c, a_low, a_high)``.

    Each segment needs at least two points; the breakpoint minimizing the
    total squared residual is chosen and reported as the first N of the
    upper segment.
    """
    pts = sorted((float(N), float(t)) for N, t in points)
    if len(pts) < 4:
        raise ValueError("need at least four points")
    best = None
    for k in range(2, len(pts) - 1):
        lo, hi = pts[:k], pts[k:]
        a1, _, r1 = fit_scaling(lo)
        a2, _, r2 = fit_scaling(hi)
        sse = r1**2 * len(lo) + r2**2 * len(hi)
        if best is None or sse < best[0]:
            best = (sse, hi[0][0], a1, a2)
    return best[1], best[2], best[3]


def analytic_table(kind: str, n_values, epsilon: float, n_u: int = 100, n_m: int = 100,
                   n_m_max: int = 10**6):
    """Rows ``(N, G2, G3, G4, variance, budget)`` for pure product states."""
    rows = []
    for N in n_values:
        g = gamma_closed_form(kind, N)
        var = variance_prop1(g, 1.0, n_u, n_m)
        rows.append((N, *g, var, required_budget(epsilon, g, 1.0, n_m_max).total))
    return rows
