"""``rmkit`` command line: data goes to CSV, metadata to JSON.

Exit codes: 0 success, 2 configuration error, 3 resource limit.
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
import time

import numpy as np
import scipy

from . import __version__
from .analytics import analytic_table
from .harness import (ConfigError, ExperimentConfig, build_sampler, build_state, child_rng,
                      measurement_source, run_budget_scaling, run_error_curve,
                      run_sampler_comparison, train_mlp, _write_csv)
from .mlp import write_history
from .mps import compress
from .samplers import estimate_purity_is, metropolis_sample
from .states import ResourceLimitError, load_state, purity

EXIT_OK, EXIT_CONFIG, EXIT_RESOURCE = 0, 2, 3


def _versions() -> dict:
    return {"rmkit": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _write_json(path, payload) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default)
    if path is None:
        print(text)
    else:
        with open(path, "w") as fh:
            fh.write(text + "\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _int_list(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _load_config(args, required: bool = True) -> ExperimentConfig | None:
    if args.config is None:
        if required:
            raise ConfigError(f"'{args.command}' needs --config <json>")
        return None
    cfg = ExperimentConfig.from_json(args.config)
    changes = {}
    for key in ("n_u", "n_repetitions", "master_seed", "workers", "epsilon", "n_values",
                "bond_dim", "max_qubits"):
        v = getattr(args, key, None)
        if v is not None:
            changes[key] = v
    if getattr(args, "n_m", None) is not None:
        changes["n_m"] = args.n_m
    if getattr(args, "nm_infinity", False):
        changes["n_m"] = None
    if getattr(args, "backend", None) is not None:
        changes["sampler"] = {**cfg.sampler, "backend": args.backend}
    return cfg.replace(**changes) if changes else cfg


def _outputs(args, cfg):
    out = dict(cfg.output) if cfg is not None else {}
    return args.csv or out.get("csv"), args.json or out.get("json")


def _meta(args, cfg, started, **extra) -> dict:
    d = {"command": args.command, "versions": _versions(),
         "runtime_seconds": round(time.perf_counter() - started, 6)}
    if cfg is not None:
        d["config"] = cfg.to_dict()
        d["seeds"] = {"master_seed": cfg.master_seed, "experiment_id": cfg.experiment_id,
                      "derivation": "SeedSequence([master_seed, crc32(experiment_id), *task_index])"}
    d.update(extra)
    return d


def cmd_estimate(args) -> None:
    t0 = time.perf_counter()
    cfg = _load_config(args)
    state = build_state(cfg)
    model = build_sampler(cfg.sampler, cfg, state, child_rng(cfg.master_seed, cfg.experiment_id,
                                                              2**31 - 1))
    rng = child_rng(cfg.master_seed, f"{cfg.experiment_id}/estimate", 0)
    chain = metropolis_sample(model, cfg.burn_in + cfg.n_u, cfg.burn_in, rng, cfg.proposal)
    est = estimate_purity_is(model, chain, measurement_source(state, cfg.n_m), rng)
    n = state.n_qubits
    header = ["index", "count"] + [f"{a}_{i}" for i in range(n) for a in ("xi", "phi")] + ["ratio"]
    rows = []
    for r in range(chain.n_distinct):
        ang = [v for i in range(n) for v in (chain.xi[r, i], chain.phi[r, i])]
        rows.append([r, int(chain.counts[r])] + ang + [est.ratios[r]])
    csv_path, json_path = _outputs(args, cfg)
    _write_csv(csv_path, header, rows)
    _write_json(json_path, _meta(args, cfg, t0, result={
        **est.to_dict(), "p2_true": purity(state), "acceptance_rate": chain.acceptance_rate,
        "normalization": model.normalization,
        "normalization_stderr": model.normalization_stderr}))


def cmd_error_curve(args) -> None:
    t0 = time.perf_counter()
    cfg = _load_config(args)
    variable = args.variable or (cfg.sweep or {}).get("variable")
    values = args.values or (cfg.sweep or {}).get("values")
    curve = run_error_curve(cfg, variable, values)
    csv_path, json_path = _outputs(args, cfg)
    curve.to_csv(csv_path)
    _write_json(json_path, _meta(args, cfg, t0, variable=curve.variable, p2_true=curve.p2_true))


def cmd_scaling(args) -> None:
    t0 = time.perf_counter()
    cfg = _load_config(args)
    res = run_budget_scaling(cfg)
    csv_path, json_path = _outputs(args, cfg)
    res.to_csv(csv_path)
    fit = None if res.fit is None else {"a": res.fit[0], "b": res.fit[1], "rms": res.fit[2]}
    _write_json(json_path, _meta(args, cfg, t0, epsilon=res.epsilon, fit=fit,
                                 censored=[p.n_qubits for p in res.points if p.censored]))


def cmd_compare(args) -> None:
    t0 = time.perf_counter()
    cfg = _load_config(args)
    table = run_sampler_comparison(cfg)
    csv_path, json_path = _outputs(args, cfg)
    table.to_csv(csv_path)
    _write_json(json_path, _meta(args, cfg, t0, p2_true=table.p2_true))


def cmd_train(args) -> None:
    t0 = time.perf_counter()
    cfg = _load_config(args)
    state = build_state(cfg)
    over = {}
    if args.epochs is not None:
        over["epochs"] = args.epochs
    if args.samples is not None:
        over["n_samples"] = args.samples
    rng = child_rng(cfg.master_seed, f"{cfg.experiment_id}/train", 0)
    model, history, data = train_mlp(cfg, state, rng, over)
    model_path = args.out or cfg.output.get("model")
    if model_path is None:
        raise ConfigError("train needs an output model path (--out or output.model)")
    model.save(model_path)
    csv_path, json_path = _outputs(args, cfg)
    if csv_path is not None:
        write_history(csv_path, history)
    mean_abs = float(np.mean(np.abs(data.targets)))
    _write_json(json_path, _meta(args, cfg, t0, model=model_path, layer_widths=model.layer_widths,
                                 final_train_mae=history[-1][1], final_test_mae=history[-1][2],
                                 relative_test_mae=history[-1][2] / mean_abs))


def cmd_compress(args) -> None:
    t0 = time.perf_counter()
    cfg = _load_config(args, required=False)
    if args.state is not None:
        try:
            state = load_state(args.state, cfg.max_qubits if cfg else 12)
        except FileNotFoundError:
            raise ConfigError(f"state file does not exist: {args.state}") from None
    elif cfg is not None:
        state = build_state(cfg)
    else:
        raise ConfigError("compress needs --state <file> or --config <json>")
    D = args.bond_dim or (cfg.bond_dim if cfg else None)
    if D is None:
        raise ConfigError("compress needs --bond-dim or bond_dim in the config")
    if state.psi is None:
        raise ConfigError("compress needs a pure state")
    mps, fid = compress(state, D)
    out = args.out or (cfg.output.get("model") if cfg else None)
    if out is None:
        raise ConfigError("compress needs an output path (--out or output.model)")
    mps.save(out)
    csv_path, json_path = _outputs(args, cfg)
    rows = [(i, d, w) for i, (d, w) in enumerate(zip(mps.bond_dims, mps.discarded_weight))]
    _write_csv(csv_path, ("bond", "dimension", "discarded_weight"), rows)
    _write_json(json_path, _meta(args, cfg, t0, mps=out, max_bond=D, fidelity=fid,
                                 n_sites=mps.n_sites))


def cmd_analytics(args) -> None:
    t0 = time.perf_counter()
    cfg = _load_config(args, required=False)
    kind = args.kind
    if kind is None and cfg is not None:
        kind = {"uniform": "uniform", "exact": "perfect"}.get(cfg.sampler["backend"])
    if kind not in ("uniform", "perfect"):
        raise ConfigError("analytics needs --kind uniform|perfect (or a uniform/exact sampler)")
    n_values = args.n_values or (cfg.n_values if cfg else None) or list(range(1, 11))
    eps = args.epsilon or (cfg.epsilon if cfg else 0.1)
    n_u = args.n_u or (cfg.n_u if cfg else 100)
    n_m = args.n_m or (cfg.n_m if cfg and cfg.n_m else 100)
    if eps <= 0 or n_m < 2 or n_u < 1:
        raise ConfigError("need epsilon > 0, n_m >= 2, n_u >= 1")
    rows = analytic_table(kind, n_values, eps, n_u, n_m)
    csv_path, json_path = _outputs(args, cfg)
    _write_csv(csv_path, ("n_qubits", "gamma2", "gamma3", "gamma4", "variance", "budget"), rows)
    _write_json(json_path, _meta(args, cfg, t0, kind=kind, epsilon=eps, n_u=n_u, n_m=n_m,
                                 purity=1.0))


COMMANDS = {
    "estimate": cmd_estimate,
    "error-curve": cmd_error_curve,
    "scaling": cmd_scaling,
    "compare": cmd_compare,
    "train": cmd_train,
    "compress": cmd_compress,
    "analytics": cmd_analytics,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rmkit", description="Randomized-measurement purity toolkit.")
    p.add_argument("--version", action="version", version=f"rmkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="experiment config JSON")
        s.add_argument("--csv", help="data output path (CSV)")
        s.add_argument("--json", help="metadata output path (JSON); stdout if omitted")
        s.add_argument("--seed", dest="master_seed", type=int)
        s.add_argument("--max-qubits", type=int)
        if name in ("estimate", "error-curve", "scaling", "compare", "analytics"):
            s.add_argument("--n-u", type=int)
            s.add_argument("--n-m", type=int)
        if name in ("estimate", "error-curve", "compare"):
            s.add_argument("--nm-infinity", action="store_true",
                           help="use exact X(u) instead of simulated shots")
        if name in ("error-curve", "scaling", "compare"):
            s.add_argument("--reps", dest="n_repetitions", type=int)
            s.add_argument("--workers", type=int)
        if name in ("estimate", "error-curve", "scaling"):
            s.add_argument("--backend", choices=("uniform", "exact", "mlp", "mps"))
        if name == "error-curve":
            s.add_argument("--variable", choices=("n_u", "n_m", "bond_dim"))
            s.add_argument("--values", type=_int_list)
        if name in ("scaling", "analytics"):
            s.add_argument("--epsilon", type=float)
            s.add_argument("--n-values", type=_int_list)
        if name == "analytics":
            s.add_argument("--kind", choices=("uniform", "perfect"))
        if name == "train":
            s.add_argument("--epochs", type=int)
            s.add_argument("--samples", type=int)
            s.add_argument("--out", help="model output path")
        if name == "compress":
            s.add_argument("--state", help="binary state file")
            s.add_argument("--bond-dim", type=int)
            s.add_argument("--out", help="MPS output path")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"rmkit: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceLimitError as exc:
        print(f"rmkit: resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
