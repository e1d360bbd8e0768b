"""Command-line front end: load JSON configs, run, emit CSV/JSON artifacts.

Subcommands: simulate, fluid, invariant-set, capacity, sensitivity, ssc,
converse, check-wmw, probe-ftail.  Every run writes a manifest.json next
to its outputs; re-running the recorded argv reproduces the outputs
byte-identically (the manifest's duration field aside).

Exit codes: 0 success, 2 malformed configuration, 3 step-budget breach,
4 domain error (e.g. a rate vector outside the capacity region).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import arrivals as arr
from . import experiments as ex
from . import fluid as fl
from .arrivals import ArrivalSpec, BurstSpec, ClosedForm, MarkovSpec
from .experiments import BudgetError, ScalingSpec
from .fluid import DomainError
from .netmodel import ConfigError, Network, load_network, simulate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_DOMAIN = 4


def _fmt(x) -> str:
    """Shortest round-trip decimal form of a float."""
    return repr(float(x))


def _require(cfg: dict, *fields: str) -> None:
    for f in fields:
        if f not in cfg:
            raise ConfigError(f"config missing field '{f}'")


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed JSON in {path}: line {e.lineno} column {e.colno}: {e.msg}")


def _network_from(cfg: dict) -> Network:
    _require(cfg, "network")
    net_cfg = cfg["network"]
    if isinstance(net_cfg, str):
        return load_network(net_cfg)
    return load_network(dict(net_cfg))


def _arrivals_from(cfg: dict) -> ArrivalSpec:
    _require(cfg, "arrivals")
    a = cfg["arrivals"]
    if "kind" not in a or "lambda" not in a:
        raise ConfigError("arrival spec needs fields 'kind' and 'lambda'")
    burst = None
    if "burst" in a:
        b = a["burst"]
        for f in ("w", "h", "g", "f"):
            if f not in b:
                raise ConfigError(f"burst spec missing field '{f}'")
        burst = BurstSpec(
            w=np.asarray(b["w"], dtype=float),
            h=ClosedForm.parse(b["h"]),
            g=ClosedForm.parse(b["g"]),
            f=ClosedForm.parse(b["f"]),
        )
    markov = None
    if "markov" in a:
        m = a["markov"]
        markov = MarkovSpec(
            means=np.asarray(m["means"], dtype=float),
            transition=np.asarray(m["transition"], dtype=float),
        )
    spec = ArrivalSpec(
        kind=a["kind"],
        lam=np.asarray(a["lambda"], dtype=float),
        a=a.get("a"),
        approach_rate=float(a.get("approach_rate", 0.0)),
        burst=burst,
        markov=markov,
    )
    if "r" in a:
        spec = spec.at(int(a["r"]))
    return spec


def _write_manifest(outdir: str, command: str, args, config_path: str | None, started: float) -> None:
    digest = None
    if config_path and os.path.exists(config_path):
        with open(config_path, "rb") as fh:
            digest = hashlib.sha256(fh.read()).hexdigest()
    manifest = {
        "command": command,
        "argv": _reproducible_argv(command, args),
        "config_path": config_path,
        "config_sha256": digest,
        "seed": args.seed,
        "threads": args.threads,
        "out": os.path.abspath(outdir),
        "version": _version(),
        "duration_s": time.time() - started,
    }
    tmp = os.path.join(outdir, "manifest.json.tmp")
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, os.path.join(outdir, "manifest.json"))


def _reproducible_argv(command: str, args) -> list[str]:
    argv = [command, "--config", args.config, "--out", args.out]
    if args.seed is not None:
        argv += ["--seed", str(args.seed)]
    argv += ["--threads", str(args.threads)]
    if getattr(args, "dump_trajectories", False):
        argv += ["--dump-trajectories"]
    return argv


def _version() -> str:
    from . import __version__

    return __version__


def _resolve_seed(args, cfg: dict) -> int:
    if args.seed is not None:
        return args.seed
    return int(cfg.get("seed", 0))


def _default_threads() -> int:
    env = os.environ.get("MWLAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"MWLAB_THREADS must be an integer, got {env!r}")
    return os.cpu_count() or 1


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    net = _network_from(cfg)
    spec = _arrivals_from(cfg)
    _require(cfg, "K", "q0")
    K = int(cfg["K"])
    if K < 0:
        raise ConfigError("K must be >= 0")
    q0 = np.asarray(cfg["q0"], dtype=float)
    seed = _resolve_seed(args, cfg)
    lam = np.asarray(cfg.get("lambda", spec.mean), dtype=float)

    A = arr.generate(spec, K, seed)
    traj = simulate(net, q0, A, lam=lam)

    path = os.path.join(args.out, "trajectory.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t"] + [f"q_{i+1}" for i in range(net.n)] + ["action", "maxdev"])
        for t in range(K):
            writer.writerow(
                [t]
                + [_fmt(v) for v in traj.q[t]]
                + [int(traj.chosen[t]), _fmt(traj.maxdev[t])]
            )
    return EXIT_OK


def cmd_fluid(args) -> int:
    cfg = _load_config(args.config)
    net = _network_from(cfg)
    _require(cfg, "lambda", "q0", "T")
    traj = fl.integrate_fluid(
        net,
        np.asarray(cfg["lambda"], dtype=float),
        np.asarray(cfg["q0"], dtype=float),
        float(cfg["T"]),
    )
    traj.to_csv(os.path.join(args.out, "fluid.csv"))
    return EXIT_OK


def cmd_invariant_set(args) -> int:
    cfg = _load_config(args.config)
    net = _network_from(cfg)
    _require(cfg, "lambda")
    inv = fl.invariant_set(net, np.asarray(cfg["lambda"], dtype=float))
    with open(os.path.join(args.out, "invariant_set.json"), "w") as fh:
        json.dump(
            {
                "lambda": [float(v) for v in inv.lam],
                "halfspaces": [
                    {"normal": [float(v) for v in g], "offset": float(b)}
                    for g, b in zip(inv.poly.normals, inv.poly.offsets)
                ],
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    with open(os.path.join(args.out, "halfspaces.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"g_{i+1}" for i in range(net.n)] + ["offset"])
        for g, b in zip(inv.poly.normals, inv.poly.offsets):
            writer.writerow([_fmt(v) for v in g] + [_fmt(b)])
    return EXIT_OK


def cmd_capacity(args) -> int:
    cfg = _load_config(args.config)
    net = _network_from(cfg)
    _require(cfg, "lambda")
    verdict = fl.capacity_check(net, np.asarray(cfg["lambda"], dtype=float))
    with open(os.path.join(args.out, "capacity.json"), "w") as fh:
        json.dump({"lambda": cfg["lambda"], "verdict": verdict}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return EXIT_OK


def _write_report(report: ex.ExperimentReport, outdir: str) -> None:
    report.write_csv(os.path.join(outdir, "report.csv"))
    report.write_json(os.path.join(outdir, "report.json"))


def _maybe_dump_trajectory(args, net, spec_resolved, q0, steps, seed, tag) -> None:
    """Per-trajectory dump (replication 0) behind --dump-trajectories."""
    if not getattr(args, "dump_trajectories", False):
        return
    A = arr.generate_with(spec_resolved, steps, arr.stream(seed, 0))
    traj = simulate(net, q0, A)
    path = os.path.join(args.out, f"trajectory_{tag}.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t"] + [f"q_{i+1}" for i in range(net.n)])
        for t, row in enumerate(traj.q):
            writer.writerow([t] + [_fmt(v) for v in row])


def cmd_sensitivity(args) -> int:
    cfg = _load_config(args.config)
    net = _network_from(cfg)
    spec = _arrivals_from(cfg)
    _require(cfg, "horizons", "replications", "q0")
    replications = int(cfg["replications"])
    if replications < 1:
        raise ConfigError("replications must be >= 1")
    seed = _resolve_seed(args, cfg)
    lam = np.asarray(cfg.get("lambda", spec.mean), dtype=float)
    report = ex.sensitivity_experiment(
        net, lam, spec, cfg["horizons"], replications,
        seed, np.asarray(cfg["q0"], dtype=float), threads=args.threads,
    )
    _write_report(report, args.out)
    _maybe_dump_trajectory(args, net, spec, np.asarray(cfg["q0"], float),
                           int(max(cfg["horizons"])), seed, "rep0")
    return EXIT_OK


def cmd_ssc(args) -> int:
    cfg = _load_config(args.config)
    net = _network_from(cfg)
    family = _arrivals_from(cfg)
    _require(cfg, "scaling", "delta", "replications")
    s = cfg["scaling"]
    for f in ("g", "r_grid", "T"):
        if f not in s:
            raise ConfigError(f"scaling spec missing field '{f}'")
    scaling = ScalingSpec(g=ClosedForm.parse(s["g"]), r_grid=tuple(s["r_grid"]), T=float(s["T"]))
    replications = int(cfg["replications"])
    if replications < 1:
        raise ConfigError("replications must be >= 1")
    seed = _resolve_seed(args, cfg)
    q0_base = np.asarray(cfg["q0_base"], dtype=float) if "q0_base" in cfg else None
    report = ex.ssc_experiment(
        net, family, scaling, float(cfg["delta"]), replications, seed,
        q0_base=q0_base, threads=args.threads,
    )
    _write_report(report, args.out)
    return EXIT_OK


def cmd_converse(args) -> int:
    cfg = _load_config(args.config)
    net = _network_from(cfg)
    _require(cfg, "lambda", "f", "g", "h", "delta", "T", "r_grid", "replications")
    replications = int(cfg["replications"])
    if replications < 1:
        raise ConfigError("replications must be >= 1")
    seed = _resolve_seed(args, cfg)
    q0 = np.asarray(cfg["q0"], dtype=float) if "q0" in cfg else None
    report = ex.converse_experiment(
        net,
        np.asarray(cfg["lambda"], dtype=float),
        ClosedForm.parse(cfg["f"]),
        ClosedForm.parse(cfg["g"]),
        ClosedForm.parse(cfg["h"]),
        float(cfg["delta"]),
        float(cfg["T"]),
        [int(r) for r in cfg["r_grid"]],
        replications,
        seed,
        q0=q0,
        threads=args.threads,
    )
    _write_report(report, args.out)
    return EXIT_OK


def cmd_check_wmw(args) -> int:
    cfg = _load_config(args.config)
    net = _network_from(cfg)
    spec = _arrivals_from(cfg)
    _require(cfg, "K", "q0")
    seed = _resolve_seed(args, cfg)
    result = ex.wmw_equivalence_check(
        net, spec, int(cfg["K"]), seed, np.asarray(cfg["q0"], dtype=float)
    )
    with open(os.path.join(args.out, "check.json"), "w") as fh:
        json.dump(
            {
                "ok": result.ok,
                "max_discrepancy": result.max_discrepancy,
                "first_divergence": result.first_divergence,
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    return EXIT_OK


def cmd_probe_ftail(args) -> int:
    cfg = _load_config(args.config)
    spec = _arrivals_from(cfg)
    _require(cfg, "delta", "r_grid", "replications")
    delta = float(cfg["delta"])
    if "f" in cfg:
        form = ClosedForm.parse(cfg["f"])
        f = lambda r, d: form(r)
    elif "beta" in cfg:
        beta = float(cfg["beta"])
        n = spec.n
        a = spec.a if spec.a is not None else 1.0
        f = lambda r, d: float(np.exp(beta * r * d / (n * a * a)))
    else:
        raise ConfigError("probe-ftail needs either 'f' (closed form) or 'beta'")
    seed = _resolve_seed(args, cfg)
    rows = arr.f_tailed_probe(
        spec, f, delta, [int(r) for r in cfg["r_grid"]], int(cfg["replications"]), seed
    )
    with open(os.path.join(args.out, "probe.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["r", "p_hat", "wilson_lo", "wilson_hi", "f_value", "product"])
        for row in rows:
            writer.writerow(
                [row["r"]]
                + [_fmt(row[k]) for k in ("p_hat", "wilson_lo", "wilson_hi", "f_value", "product")]
            )
    with open(os.path.join(args.out, "probe.json"), "w") as fh:
        json.dump({"rows": rows, "delta": delta}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "fluid": cmd_fluid,
    "invariant-set": cmd_invariant_set,
    "capacity": cmd_capacity,
    "sensitivity": cmd_sensitivity,
    "ssc": cmd_ssc,
    "converse": cmd_converse,
    "check-wmw": cmd_check_wmw,
    "probe-ftail": cmd_probe_ftail,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mwlab",
        description="Max-Weight network simulation, fluid integration, and collapse experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON configuration file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: MWLAB_THREADS or machine parallelism)")
        p.add_argument("--dump-trajectories", action="store_true",
                       help="also write per-run trajectory CSVs where supported")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    started = time.time()
    try:
        if args.threads is None:
            args.threads = _default_threads()
        os.makedirs(args.out, exist_ok=True)
        code = _COMMANDS[args.command](args)
        if code == EXIT_OK:
            _write_manifest(args.out, args.command, args, args.config, started)
        return code
    except BudgetError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BUDGET
    except DomainError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DOMAIN
    except (ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
