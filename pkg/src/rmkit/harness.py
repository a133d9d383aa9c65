"""Seeded experiment runner: error curves, budget scaling and sampler comparisons.

Every repetition draws its randomness from a child generator derived from
``(master_seed, experiment_id, task indices)``, so results do not depend on
scheduling and parallel runs reproduce serial ones exactly.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import io
import json
import math
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .analytics import fit_scaling
from .mlp import GHZ_WIDTHS, PRODUCT_WIDTHS, MLPModel, generate_training_set, train
from .mps import MPSState, compress
from .samplers import (DEFAULT_BURN_IN, DEFAULT_NORMALIZATION_SAMPLES, ExactLimit, ExactSampler,
                       MLPSampler, MPSSampler, SamplerModel, SimulatedMeasurements,
                       UniformSampler, calibrate, estimate_purity_is, metropolis_sample)
from .states import DEFAULT_MAX_QUBITS, DenseState, purity, state_from_spec

BACKENDS = ("uniform", "exact", "mlp", "mps")
SWEEP_VARIABLES = ("n_u", "n_m", "bond_dim")
MIN_BUDGET_REPETITIONS = 100
BUDGET_PRECISION = 1.05
JOINT_START_NM = 32


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


def child_rng(master_seed: int, experiment_id: str, *task_index: int) -> np.random.Generator:
    """Generator keyed by ``(master_seed, experiment_id, task_index...)``."""
    key = [int(master_seed) & 0xFFFFFFFF, zlib.crc32(experiment_id.encode())]
    key += [int(i) for i in task_index]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


_FIELDS_HELP = {
    "state": "state spec mapping, e.g. {\"kind\": \"ghz\", \"n\": 4}",
    "sampler": "sampler spec mapping with a 'backend' key",
}


@dataclass
class ExperimentConfig:
    state: dict
    sampler: dict = field(default_factory=lambda: {"backend": "uniform"})
    n_u: int = 100
    n_m: int | None = 100
    n_repetitions: int = 100
    master_seed: int = 0
    experiment_id: str = "rmkit"
    burn_in: int = DEFAULT_BURN_IN
    proposal: str = "independent"
    sweep: dict | None = None
    samplers: list | None = None
    n_values: list | None = None
    epsilon: float = 0.1
    budget_cap: int = 10**7
    training: dict = field(default_factory=dict)
    bond_dim: int | None = None
    output: dict = field(default_factory=dict)
    workers: int = 1
    max_qubits: int = DEFAULT_MAX_QUBITS

    def __post_init__(self):
        self.validate()

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "state" not in d:
            raise ConfigError("config needs a 'state' entry: " + _FIELDS_HELP["state"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "ExperimentConfig":
        d = copy.deepcopy(self.to_dict())
        d.update(changes)
        return ExperimentConfig(**d)

    def validate(self) -> None:
        def positive_int(name, value, minimum=1):
            if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
                raise ConfigError(f"{name} must be an integer >= {minimum}, got {value!r}")

        if not isinstance(self.state, dict) or "kind" not in self.state:
            raise ConfigError("state must be a mapping with a 'kind': " + _FIELDS_HELP["state"])
        _check_sampler_spec(self.sampler, "sampler")
        positive_int("n_u", self.n_u)
        if self.n_m is not None:
            positive_int("n_m", self.n_m, 2)
        positive_int("n_repetitions", self.n_repetitions)
        positive_int("burn_in", self.burn_in, 0)
        positive_int("workers", self.workers)
        positive_int("budget_cap", self.budget_cap, 2)
        positive_int("max_qubits", self.max_qubits)
        if not isinstance(self.master_seed, int) or self.master_seed < 0:
            raise ConfigError(f"master_seed must be a non-negative integer, got {self.master_seed!r}")
        if self.proposal not in ("independent", "single_qubit"):
            raise ConfigError(f"proposal must be 'independent' or 'single_qubit', got {self.proposal!r}")
        if not (isinstance(self.epsilon, (int, float)) and self.epsilon > 0):
            raise ConfigError(f"epsilon must be positive, got {self.epsilon!r}")
        if self.bond_dim is not None:
            positive_int("bond_dim", self.bond_dim)
        if self.sweep is not None:
            var = self.sweep.get("variable") if isinstance(self.sweep, dict) else None
            if var not in SWEEP_VARIABLES:
                raise ConfigError(f"sweep.variable must be one of {SWEEP_VARIABLES}, got {var!r}")
            vals = self.sweep.get("values")
            if not isinstance(vals, list) or not vals:
                raise ConfigError("sweep.values must be a non-empty list")
        if self.samplers is not None:
            if not isinstance(self.samplers, list) or not self.samplers:
                raise ConfigError("samplers must be a non-empty list of sampler specs")
            for i, s in enumerate(self.samplers):
                _check_sampler_spec(s, f"samplers[{i}]")
        if self.n_values is not None:
            if not isinstance(self.n_values, list) or not self.n_values:
                raise ConfigError("n_values must be a non-empty list of qubit counts")
            for v in self.n_values:
                positive_int("n_values entry", v)
        for spec in [self.state] + ([self.sampler] if self.sampler else []):
            path = spec.get("path")
            if path is not None and not os.path.exists(path):
                raise ConfigError(f"referenced file does not exist: {path}")


def _check_sampler_spec(spec, where: str) -> None:
    if not isinstance(spec, dict) or spec.get("backend") not in BACKENDS:
        got = spec.get("backend") if isinstance(spec, dict) else spec
        raise ConfigError(f"{where}.backend must be one of {BACKENDS}, got {got!r}")
    if spec["backend"] == "mps" and "path" not in spec:
        d = spec.get("bond_dim")
        if isinstance(d, bool) or not isinstance(d, int) or d < 1:
            raise ConfigError(f"{where}: mps backend needs an integer bond_dim >= 1 or a path")
    if "path" in spec and not os.path.exists(spec["path"]):
        raise ConfigError(f"referenced file does not exist: {spec['path']}")


# ---------------------------------------------------------------- building blocks

def build_state(config: ExperimentConfig, n: int | None = None) -> DenseState:
    spec = dict(config.state)
    if n is not None:
        spec["n"] = n
    try:
        return state_from_spec(spec, config.max_qubits)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"incomplete state spec {spec}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"invalid state spec {spec}: {exc}") from None


def _global_pure_state(config: ExperimentConfig, n: int | None) -> DenseState:
    spec = {k: v for k, v in config.state.items() if k != "keep"}
    if n is not None:
        spec["n"] = n
    st = state_from_spec(spec, config.max_qubits)
    if st.psi is None:
        raise ConfigError("the mps backend needs a pure global state")
    return st


def build_sampler(spec: dict, config: ExperimentConfig, state: DenseState,
                  rng: np.random.Generator, n: int | None = None) -> SamplerModel:
    """Instantiate a sampler model for ``state`` from a sampler spec."""
    backend = spec["backend"]
    if backend == "uniform":
        return UniformSampler(state.n_qubits)
    if backend == "exact":
        return ExactSampler(state)
    if backend == "mps":
        keep = config.state.get("keep")
        if "path" in spec:
            mps = MPSState.load(spec["path"])
        else:
            mps, _ = compress(_global_pure_state(config, n), int(spec["bond_dim"]))
        model = MPSSampler(mps, keep)
        if model.n_qubits != state.n_qubits:
            raise ConfigError("MPS sampler and state act on different qubit counts")
        return model
    # mlp
    if "path" in spec:
        net = MLPModel.load(spec["path"])
    else:
        net, _, _ = train_mlp(config, state, rng, spec.get("training"))
    model = MLPSampler(net)
    if model.n_qubits != state.n_qubits:
        raise ConfigError("MLP sampler and state act on different qubit counts")
    return calibrate(model, int(spec.get("normalization_samples", DEFAULT_NORMALIZATION_SAMPLES)),
                     rng)


def train_mlp(config: ExperimentConfig, state: DenseState, rng: np.random.Generator,
              overrides: dict | None = None):
    """Train on exact ``X`` labels (or shot-noisy ones with ``shot_noise``); returns ``(model, history, data)``."""
    t = {**config.training, **(overrides or {})}
    default_widths = GHZ_WIDTHS if config.state.get("kind") == "ghz" else PRODUCT_WIDTHS
    try:
        data = generate_training_set(state, int(t.get("n_samples", 20_000)), t.get("shot_noise"),
                                     rng)
        net, history = train(data, tuple(t.get("layer_widths", default_widths)),
                             epochs=int(t.get("epochs", 500)),
                             learning_rate=float(t.get("learning_rate", 1e-3)),
                             batch_size=int(t.get("batch_size", 256)),
                             split_fraction=float(t.get("split_fraction", 0.8)), rng=rng)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid training settings {t}: {exc}") from None
    return net, history, data


def measurement_source(state: DenseState, n_m: int | None):
    return ExactLimit(state) if n_m is None else SimulatedMeasurements(state, n_m)


def run_pipeline(model: SamplerModel, source, n_u: int, burn_in: int,
                 rng: np.random.Generator, proposal: str = "independent"):
    """One experiment: a fresh chain of ``n_u`` retained unitaries, then fresh measurements."""
    chain = metropolis_sample(model, burn_in + n_u, burn_in, rng, proposal)
    return estimate_purity_is(model, chain, source, rng)


def _repetition_chunk(args):
    model, source, n_u, burn_in, proposal, seed, exp_id, prefix, indices = args
    out = np.empty(len(indices))
    for j, r in enumerate(indices):
        rng = child_rng(seed, exp_id, *prefix, r)
        out[j] = run_pipeline(model, source, n_u, burn_in, rng, proposal).p2_hat
    return out


def repeat_estimates(model: SamplerModel, source, n_u: int, n_repetitions: int, *,
                     burn_in: int, master_seed: int, experiment_id: str, key=(),
                     proposal: str = "independent", workers: int = 1) -> np.ndarray:
    """``p2_hat`` for each repetition; repetition ``r`` uses the child seed ``(*key, r)``."""
    indices = list(range(n_repetitions))
    if workers <= 1 or n_repetitions < 2:
        return _repetition_chunk((model, source, n_u, burn_in, proposal, master_seed,
                                  experiment_id, tuple(key), indices))
    chunks = [indices[i::workers] for i in range(workers)]
    jobs = [(model, source, n_u, burn_in, proposal, master_seed, experiment_id, tuple(key), c)
            for c in chunks]
    out = np.empty(n_repetitions)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for c, vals in zip(chunks, pool.map(_repetition_chunk, jobs)):
            out[c] = vals
    return out


def mean_abs_error(p2_true: float, estimates: np.ndarray) -> tuple[float, float]:
    err = np.abs(np.asarray(estimates) - p2_true)
    se = float(err.std(ddof=1) / math.sqrt(err.size)) if err.size > 1 else 0.0
    return float(err.mean()), se


# ---------------------------------------------------------------- results

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path, header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


@dataclass
class ErrorPoint:
    value: float
    error: float
    stderr: float
    mean_estimate: float
    n_repetitions: int

    def __post_init__(self):
        if self.error < 0:
            raise ValueError("mean absolute error cannot be negative")


@dataclass
class ErrorCurve:
    variable: str
    points: list
    p2_true: float

    HEADER = ("value", "error", "stderr", "mean_estimate", "n_repetitions")

    def rows(self):
        return [(p.value, p.error, p.stderr, p.mean_estimate, p.n_repetitions) for p in self.points]

    def to_csv(self, path=None) -> str:
        return _write_csv(path, (self.variable,) + self.HEADER[1:], self.rows())


@dataclass
class BudgetPoint:
    n_qubits: int
    budget: int | None
    n_u: int | None
    n_m: int | None
    error: float | None
    censored: bool


@dataclass
class ScalingResult:
    points: list
    fit: tuple | None
    epsilon: float

    def to_csv(self, path=None) -> str:
        rows = [(p.n_qubits, p.budget, p.n_u, p.n_m, p.error, int(p.censored)) for p in self.points]
        return _write_csv(path, ("n_qubits", "budget", "n_u", "n_m", "error", "censored"), rows)


@dataclass
class ComparisonRow:
    label: str
    backend: str
    error: float
    stderr: float
    mean_estimate: float


@dataclass
class ComparisonTable:
    rows: list
    p2_true: float

    def by_label(self) -> dict:
        return {r.label: r for r in self.rows}

    def to_csv(self, path=None) -> str:
        rows = [(r.label, r.backend, r.error, r.stderr, r.mean_estimate) for r in self.rows]
        return _write_csv(path, ("sampler", "backend", "error", "stderr", "mean_estimate"), rows)


# ---------------------------------------------------------------- experiments

def _cast_sweep_value(variable, v):
    if variable == "n_m" and v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, int) or v < (2 if variable == "n_m" else 1):
        raise ConfigError(f"invalid {variable} sweep value {v!r}")
    return v


def run_error_curve(config: ExperimentConfig, variable: str | None = None,
                    values=None) -> ErrorCurve:
    """Mean absolute error of the purity estimate at each sweep value.

    ``variable`` is ``n_u``, ``n_m`` or ``bond_dim`` (the latter rebuilds an
    MPS sampler per value).  Sweep point ``i`` uses child seeds ``(i, r)``.
    """
    if variable is None or values is None:
        if config.sweep is None:
            raise ConfigError("error curve needs sweep.variable and sweep.values")
        variable, values = config.sweep["variable"], config.sweep["values"]
    if variable not in SWEEP_VARIABLES:
        raise ConfigError(f"sweep variable must be one of {SWEEP_VARIABLES}, got {variable!r}")
    values = [_cast_sweep_value(variable, v) for v in values]
    state = build_state(config)
    p2 = purity(state)
    exp_id = f"{config.experiment_id}/error-curve/{variable}"
    model = None
    if variable != "bond_dim":
        model = build_sampler(config.sampler, config, state,
                              child_rng(config.master_seed, exp_id, 2**31 - 1))
    points = []
    for i, v in enumerate(values):
        n_u, n_m, m = config.n_u, config.n_m, model
        if variable == "n_u":
            n_u = v
        elif variable == "n_m":
            n_m = v
        else:
            m = build_sampler({"backend": "mps", "bond_dim": v}, config, state,
                              child_rng(config.master_seed, exp_id, 2**31 - 1))
        est = repeat_estimates(m, measurement_source(state, n_m), n_u, config.n_repetitions,
                               burn_in=config.burn_in, master_seed=config.master_seed,
                               experiment_id=exp_id, key=(i,), proposal=config.proposal,
                               workers=config.workers)
        e, se = mean_abs_error(p2, est)
        points.append(ErrorPoint(v, e, se, float(est.mean()), config.n_repetitions))
    return ErrorCurve(variable, points, p2)


def run_sampler_comparison(config: ExperimentConfig, samplers=None) -> ComparisonTable:
    """E for each sampler at the config's ``(n_u, n_m)``.

    All samplers share the repetition seeds, pairing their randomness.
    """
    samplers = samplers if samplers is not None else config.samplers
    if not samplers:
        raise ConfigError("comparison needs a non-empty samplers list")
    for i, s in enumerate(samplers):
        _check_sampler_spec(s, f"samplers[{i}]")
    state = build_state(config)
    p2 = purity(state)
    exp_id = f"{config.experiment_id}/compare"
    rows = []
    for i, spec in enumerate(samplers):
        model = build_sampler(spec, config, state, child_rng(config.master_seed, exp_id, 2**31 - 1, i))
        est = repeat_estimates(model, measurement_source(state, config.n_m), config.n_u,
                               config.n_repetitions, burn_in=config.burn_in,
                               master_seed=config.master_seed, experiment_id=exp_id,
                               proposal=config.proposal, workers=config.workers)
        e, se = mean_abs_error(p2, est)
        label = spec.get("label") or _default_label(spec)
        rows.append(ComparisonRow(label, spec["backend"], e, se, float(est.mean())))
    return ComparisonTable(rows, p2)


def _default_label(spec: dict) -> str:
    if spec["backend"] == "mps" and "bond_dim" in spec:
        return f"mps(D={spec['bond_dim']})"
    return spec["backend"]


def _bisect_min(feasible, lo: int, hi: int) -> int:
    """Smallest integer in ``(lo, hi]`` with ``feasible`` true, to 5% relative precision.

    ``lo`` is known infeasible and ``hi`` feasible.
    """
    while hi > max(lo + 1, math.ceil(BUDGET_PRECISION * lo)):
        mid = (lo + hi) // 2
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


class _PrefixPool:
    """Chains of ``n_u_max`` retained steps per repetition, with running estimates.

    The first ``k`` retained steps of a chain are themselves a chain of
    length ``k``, so one pool answers every ``n_u <= n_u_max`` probe.
    """

    def __init__(self, model, source, n_u_max, reps, burn_in, seed, exp_id, key, proposal):
        self.n_u_max = n_u_max
        self.cum = np.empty((reps, n_u_max))
        for r in range(reps):
            rng = child_rng(seed, exp_id, *key, r)
            chain = metropolis_sample(model, burn_in + n_u_max, burn_in, rng, proposal)
            est = estimate_purity_is(model, chain, source, rng)
            self.cum[r] = np.cumsum(np.repeat(est.ratios, chain.counts))

    def estimates(self, n_u: int) -> np.ndarray:
        return self.cum[:, n_u - 1] / n_u


def _budget_perfect(model, state, p2, eps, cap, reps, config, exp_id, n):
    """N_u = 1; bisection over N_M."""
    def error(n_m):
        est = repeat_estimates(model, measurement_source(state, n_m), 1, reps,
                               burn_in=config.burn_in, master_seed=config.master_seed,
                               experiment_id=exp_id, key=(n,), proposal=config.proposal)
        return mean_abs_error(p2, est)[0]

    hi = 2
    while error(hi) > eps:
        if hi >= cap:
            return BudgetPoint(n, None, 1, None, None, True)
        hi = min(2 * hi, cap)
    n_m = hi if hi == 2 else _bisect_min(lambda m: error(m) <= eps, hi // 2, hi)
    return BudgetPoint(n, n_m, 1, n_m, error(n_m), False)


def _budget_joint(model, state, p2, eps, cap, reps, config, exp_id, n):
    """Minimal ``N_u * N_M`` over a geometric ``N_M`` grid, bisecting ``N_u`` at each node.

    The walk starts at ``JOINT_START_NM`` and moves by factors of two in the
    direction of decreasing total, then refines the best node to 5%.  A node
    whose ``N_u`` would have to exceed ``best_total / N_M`` is pruned.
    """
    cache = {}
    best = {"total": cap, "n_u": 64}

    def best_nu(n_m):
        if n_m in cache:
            return cache[n_m]
        source = measurement_source(state, n_m)
        limit = max(1, best["total"] // n_m)
        n_u_max = min(max(2, int(1.25 * best["n_u"] * best.get("n_m", n_m) / n_m)), limit)
        while True:
            pool = _PrefixPool(model, source, n_u_max, reps, config.burn_in, config.master_seed,
                               exp_id, (n, n_m), config.proposal)

            def err(k):
                return mean_abs_error(p2, pool.estimates(k))[0]

            if err(n_u_max) <= eps:
                break
            if n_u_max >= limit:
                cache[n_m] = (None, None)
                return cache[n_m]
            n_u_max = min(2 * n_u_max, limit)
        n_u = 1 if err(1) <= eps else _bisect_min(lambda k: err(k) <= eps, 1, n_u_max)
        cache[n_m] = (n_u, err(n_u))
        if n_u * n_m <= best["total"]:
            best.update(total=n_u * n_m, n_u=n_u, n_m=n_m)
        return cache[n_m]

    def total(n_m):
        n_u, _ = best_nu(n_m)
        return math.inf if n_u is None else n_u * n_m

    start = min(JOINT_START_NM, cap)
    total(start)
    for direction in (2.0, 0.5):
        n_m, rises = start, 0
        while True:
            if direction > 1 and best_nu(n_m)[0] == 1:
                break
            n_m = int(round(n_m * direction))
            if n_m < 2 or n_m > cap:
                break
            if total(n_m) > best["total"]:
                rises += 1
                if rises >= 2:
                    break
            else:
                rises = 0
    if "n_m" not in best:
        return BudgetPoint(n, None, None, None, None, True)
    step = 2.0
    while step > BUDGET_PRECISION:
        step = math.sqrt(step)
        centre = best["n_m"]
        for cand in (int(round(centre / step)), int(round(centre * step))):
            if 2 <= cand <= cap:
                total(cand)
    n_m = best["n_m"]
    n_u, e = cache[n_m]
    return BudgetPoint(n, n_u * n_m, n_u, n_m, e, False)


def run_budget_scaling(config: ExperimentConfig, n_values=None, epsilon=None) -> ScalingResult:
    """Minimal empirical budget ``N_u * N_M`` reaching mean absolute error ``epsilon``.

    Exact (perfect) samplers fix ``N_u = 1`` and bisect ``N_M``; other
    samplers search the joint grid.  Points exceeding ``budget_cap`` are
    censored and left out of the exponential fit.
    """
    n_values = n_values if n_values is not None else (config.n_values or list(range(2, 8)))
    eps = float(epsilon if epsilon is not None else config.epsilon)
    if eps <= 0:
        raise ConfigError("epsilon must be positive")
    reps = max(config.n_repetitions, MIN_BUDGET_REPETITIONS)
    exp_id = f"{config.experiment_id}/scaling/{eps!r}"
    points = []
    for n in n_values:
        state = build_state(config, n)
        p2 = purity(state)
        model = build_sampler(config.sampler, config, state,
                              child_rng(config.master_seed, exp_id, 2**31 - 1, n), n)
        search = _budget_perfect if config.sampler["backend"] == "exact" else _budget_joint
        points.append(search(model, state, p2, eps, config.budget_cap, reps, config, exp_id, n))
    ok = [(p.n_qubits, p.budget) for p in points if not p.censored]
    fit = fit_scaling(ok) if len(ok) >= 2 else None
    return ScalingResult(points, fit, eps)
