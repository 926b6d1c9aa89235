"""Command-line entry point.

Subcommands::

    fedcvr run    [options]   one experiment -> CSV + manifest
    fedcvr sweep  [options]   cross product over algorithms / compressors / seeds
    fedcvr check  [options]   print derived L, omega, eta, alpha, b without running
    fedcvr omega  [options]   empirical audit of a compressor's variance constant

Options can also come from a flat ``key=value`` file given with
``--config``; flags on the command line win over file values.
"""
import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields, replace
from importlib import metadata
from typing import Dict, List, Optional, Sequence

import numpy as np

from .compress import bit_cost_model, estimate_omega_empirical, omega, parse_compressor
from .harness import ExperimentConfig, config_dict, format_rows, resolve, run_setup, stopping_check

log = logging.getLogger("fedcvr")


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _eta(text: str):
    if text in ("theory:convex", "theory:nonconvex"):
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"eta must be a float, theory:convex or theory:nonconvex; got {text!r}")


def _batch(text: str):
    if text in ("full", "theory"):
        return text
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"batch must be an integer, 'full' or 'theory'; got {text!r}")


def _sigma(text: str):
    if text == "estimate":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"sigma must be a float or 'estimate'; got {text!r}")


# flag -> (config field, converter, choices)
OPTIONS = {
    "problem": ("problem", str, ("logreg", "quadratic")),
    "dataset": ("dataset", str, None),
    "samples": ("samples", int, None),
    "dim": ("dim", int, None),
    "reg-alpha": ("reg_alpha", float, None),
    "partition": ("partition", str, ("uniform", "class_sorted")),
    "clients": ("clients", int, None),
    "participate": ("participate", int, None),
    "algo": ("algo", str, ("cofig", "frecon")),
    "compressor": ("compressor", str, None),
    "eta": ("eta", _eta, None),
    "alpha": ("alpha", float, None),
    "lambda": ("lam", float, None),
    "batch": ("batch", _batch, None),
    "eps": ("eps", float, None),
    "smoothness": ("smoothness", float, None),
    "sigma": ("sigma", _sigma, None),
    "rounds": ("rounds", int, None),
    "eval-every": ("eval_every", int, None),
    "seed": ("seed", int, None),
    "h0": ("h0", str, ("zeros", "localgrad")),
    "workers": ("workers", int, None),
}
SWITCHES = {
    "coupled-sampling": "coupled_sampling",
    "stop-early": "stop_early",
    "record-time": "record_time",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value file; command-line flags override it")
    for flag, (_, conv, choices) in OPTIONS.items():
        p.add_argument(f"--{flag}", type=conv, choices=choices, default=argparse.SUPPRESS)
    for flag in SWITCHES:
        p.add_argument(f"--{flag}", nargs="?", const=True, type=_bool, default=argparse.SUPPRESS)


def read_config_file(path: str) -> Dict[str, object]:
    """Parse ``key=value`` lines; keys may use ``-`` or ``_`` and config field names."""
    by_name = {}
    for flag, (name, conv, choices) in OPTIONS.items():
        by_name[flag] = by_name[flag.replace("-", "_")] = by_name[name] = (name, conv, choices)
    for flag, name in SWITCHES.items():
        by_name[flag] = by_name[name] = (name, _bool, None)
    out = {}
    with open(path) as fh:
        for n, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or key not in by_name:
                raise UsageError(f"{path}:{n}: unknown or malformed entry {line!r}")
            name, conv, choices = by_name[key]
            try:
                v = conv(value)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"{path}:{n}: {exc}")
            if choices and v not in choices:
                raise UsageError(f"{path}:{n}: {key} must be one of {choices}")
            out[name] = v
    return out


def config_from_args(args: argparse.Namespace, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    cfg = base or ExperimentConfig()
    overrides = {}
    if getattr(args, "config", None):
        overrides.update(read_config_file(args.config))
    ns = vars(args)
    for flag, (name, _, _) in OPTIONS.items():
        key = flag.replace("-", "_")
        if key in ns:
            overrides[name] = ns[key]
    for flag, name in SWITCHES.items():
        key = flag.replace("-", "_")
        if key in ns:
            overrides[name] = ns[key]
    return replace(cfg, **overrides)


def cell_name(cfg: ExperimentConfig) -> str:
    return f"{cfg.algo}_{cfg.compressor.replace(':', '')}_{cfg.partition}_seed{cfg.seed}"


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v


def manifest_for(setup, csv_name: str) -> Dict[str, object]:
    return {
        "version": _version(),
        "seed": setup.config.seed,
        "config": config_dict(setup.config),
        "derived": {k: _jsonable(v) for k, v in setup.derived.items()},
        "csv": csv_name,
    }


def run_cell(cfg: ExperimentConfig, out_dir: str) -> Dict[str, object]:
    setup = resolve(cfg)
    rows = run_setup(setup)
    name = cell_name(cfg)
    csv_path = os.path.join(out_dir, name + ".csv")
    with open(csv_path, "w", newline="") as fh:
        fh.write(format_rows(rows))
    with open(os.path.join(out_dir, name + ".manifest.json"), "w") as fh:
        json.dump(manifest_for(setup, name + ".csv"), fh, indent=2, sort_keys=True)
        fh.write("\n")
    reached, t_hit = stopping_check(rows, cfg.eps)
    bits = next((r.cum_bits for r in rows if r.t == t_hit), None) if reached else None
    return {
        "cell": name, "algo": cfg.algo, "compressor": cfg.compressor, "partition": cfg.partition,
        "seed": cfg.seed, "eps": cfg.eps, "reached": reached, "t_hit": t_hit, "bits_to_eps": bits,
        "final_grad_norm": rows[-1].grad_norm, "final_loss": rows[-1].loss, "csv": csv_path,
    }


def load_manifest_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        data = json.load(fh)
    known = {f.name for f in fields(ExperimentConfig)}
    cfg = data.get("config", {})
    unknown = set(cfg) - known
    if unknown:
        raise UsageError(f"{path}: unknown config keys {sorted(unknown)}")
    return ExperimentConfig(**cfg)


def _cmd_run(args) -> int:
    base = load_manifest_config(args.from_manifest) if args.from_manifest else None
    cfg = config_from_args(args, base)
    os.makedirs(args.out, exist_ok=True)
    summary = run_cell(cfg, args.out)
    print(f"wrote {summary['csv']}")
    status = "reached" if summary["reached"] else "not reached"
    print(f"grad_norm <= {cfg.eps:g}: {status}"
          + (f" at t={summary['t_hit']} ({summary['bits_to_eps']} bits)" if summary["reached"] else ""))
    return 0


def _split_list(text: str) -> List[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _cmd_sweep(args) -> int:
    base = config_from_args(args)
    algos = _split_list(args.algos)
    compressors = _split_list(args.compressors)
    partitions = _split_list(args.partitions) if args.partitions else [base.partition]
    try:
        seeds = [int(s) for s in _split_list(args.seeds)] if args.seeds else [base.seed]
    except ValueError:
        raise UsageError(f"--seeds must be a comma-separated list of integers, got {args.seeds!r}")
    cells = [replace(base, algo=a, compressor=c, partition=p, seed=s)
             for a in algos for c in compressors for p in partitions for s in seeds]
    for c in cells:
        c.validate()
    os.makedirs(args.out, exist_ok=True)
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            results = list(ex.map(run_cell, cells, [args.out] * len(cells)))
    else:
        results = [run_cell(c, args.out) for c in cells]
    cols = ["cell", "algo", "compressor", "partition", "seed", "eps", "reached", "t_hit", "bits_to_eps",
            "final_grad_norm", "final_loss"]
    path = os.path.join(args.out, "summary.csv")
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in results:
            fh.write(",".join("" if r[c] is None else str(r[c]) for c in cols) + "\n")
    for r in results:
        hit = f"t={r['t_hit']} bits={r['bits_to_eps']}" if r["reached"] else "not reached"
        print(f"{r['cell']}: {hit}")
    print(f"wrote {path}")
    return 0


def _cmd_check(args) -> int:
    cfg = config_from_args(args)
    setup = resolve(cfg)
    d = setup.derived
    print(f"L={d['L']:.10g}")
    print(f"omega={d['omega']:.10g}")
    print(f"eta={d['eta']:.10g} ({d['eta_source']})")
    print(f"alpha={d['alpha']:.10g} ({d['alpha_source']})")
    print(f"b={d['b']}")
    print(f"sigma={d['sigma']:.10g} ({d['sigma_source']})")
    if "lambda" in d:
        print(f"lambda={d['lambda']:.10g} ({d['lambda_source']})")
    print(f"bits_per_message={d['bits_per_message']}")
    return 0


def _battery(dim: int, rng: np.random.Generator) -> List[np.ndarray]:
    e1 = np.zeros(dim)
    e1[0] = 1.0
    return [
        np.ones(dim),
        e1,
        rng.standard_normal(dim),
        np.linspace(-3.0, 5.0, dim) + 0.1,
        rng.standard_normal(dim) * np.exp(rng.uniform(-5, 5, dim)),
    ]


def _cmd_omega(args) -> int:
    spec = parse_compressor(args.compressor, args.dim)
    bound = omega(spec)
    rng = np.random.default_rng(args.seed)
    print(f"compressor={spec.label} dim={spec.dim} omega={bound:.10g} bits_per_message={bit_cost_model(spec)}")
    worst = 0.0
    for j, x in enumerate(_battery(args.dim, rng)):
        est = estimate_omega_empirical(spec, x, args.trials, rng)
        worst = max(worst, est)
        print(f"probe {j}: empirical={est:.6g}")
    ok = worst <= bound * 1.05 + 1e-12
    print(f"max empirical={worst:.6g} {'<=' if ok else '>'} omega*1.05={bound * 1.05:.6g}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fedcvr", description="Compressed, client-variance-reduced federated optimization")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run one experiment")
    _add_config_flags(p)
    p.add_argument("--out", default="results")
    p.add_argument("--from-manifest", help="replay the config recorded in a manifest")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="run a grid of experiments")
    _add_config_flags(p)
    p.add_argument("--out", default="results")
    p.add_argument("--algos", default="cofig,frecon")
    p.add_argument("--compressors", default="natural")
    p.add_argument("--partitions")
    p.add_argument("--seeds")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("check", help="print derived hyperparameters without running")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_check)

    p = sub.add_parser("omega", help="audit a compressor's variance constant")
    p.add_argument("--compressor", required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_omega)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"fedcvr: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, ValueError, OSError) as exc:
        print(f"fedcvr: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
