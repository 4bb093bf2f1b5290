"""Command-line entry point: ``generate``, ``enumerate`` and ``experiment``.

Settings resolve as built-in defaults, then an optional ``--config`` file
(YAML or JSON, flat or nested under the subcommand name), then explicit
flags. Exit codes: 0 success, 2 usage or validation error, 3 computation
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from .criteria import CRITERIA
from .datagen import KINDS, GeneratorSpec, generate, load_csv, save_csv
from .em import EmConfig
from .enumeration import EnumerationConfig, enumerate_clusters
from .errors import IngestionError, InvalidArgumentError, RobustEnumError
from .experiment import (
    OLD_FAITHFUL_MODES,
    FitSettings,
    default_workers,
    replay_feature_sweep,
    replay_heterogeneity_sweep,
    replay_old_faithful,
    replay_outlier_sweep,
    replay_overlap_sweep,
    replay_table1,
)

EXIT_OK, EXIT_USAGE, EXIT_COMPUTE = 0, 2, 3

PROTOCOLS = ("table1", "outliers", "features", "overlap", "heterogeneity", "oldfaithful")

GENERATOR_DEFAULTS = {
    "kind": "data1",
    "n_per_cluster": [500],
    "alpha": 0.0,
    "outlier_count": None,
    "r": 2,
    "overlap": 0.0,
    "base": None,
}

DEFAULTS = {
    "generate": {**GENERATOR_DEFAULTS, "seed": 0, "out": None},
    "enumerate": {
        **GENERATOR_DEFAULTS,
        "data": None,
        "standardize": False,
        "data_seed": 0,
        "criterion": "bic_t",
        "nu": None,
        "lmin": 1,
        "lmax": 6,
        "seed": 0,
        "restarts": 3,
        "max_iter": 500,
        "rel_tol": 1e-8,
        "json": False,
    },
    "experiment": {
        "protocol": None,
        "runs": 50,
        "seed": 0,
        "out": None,
        "values": None,
        "criteria": list(CRITERIA),
        "data": None,
        "mode": "clean",
        "nu": 3.0,
        "lmax": None,
        "restarts": 3,
        "max_iter": 500,
        "rel_tol": 1e-8,
        "threads": None,
    },
}


class UsageError(Exception):
    """Invalid command-line input; maps to exit code 2."""


def _add_generator_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--kind", choices=KINDS)
    p.add_argument("--n-per-cluster", dest="n_per_cluster", type=int, nargs="+")
    p.add_argument("--alpha", type=float, help="fraction of replacement outliers")
    p.add_argument("--outlier-count", dest="outlier_count", type=int)
    p.add_argument("--r", type=int, help="number of features (data3)")
    p.add_argument("--overlap", type=float, help="overlap percentage (overlap-sweep)")
    p.add_argument("--base", help="CSV holding the base data of the custom kind")


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS keeps unset flags out of the namespace so file values survive
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="YAML or JSON settings file")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="robust-enum", description="Robust cluster enumeration")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], argument_default=argparse.SUPPRESS,
                       help="write a synthetic data set to CSV")
    _add_generator_flags(g)
    g.add_argument("--seed", type=int)
    g.add_argument("--out")

    e = sub.add_parser("enumerate", parents=[common], argument_default=argparse.SUPPRESS,
                       help="estimate the number of clusters")
    e.add_argument("--data", help="input CSV; generator flags are used when absent")
    e.add_argument("--standardize", action="store_true")
    _add_generator_flags(e)
    e.add_argument("--data-seed", dest="data_seed", type=int)
    e.add_argument("--criterion", choices=CRITERIA)
    e.add_argument("--nu", type=float)
    e.add_argument("--lmin", type=int)
    e.add_argument("--lmax", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--restarts", type=int)
    e.add_argument("--max-iter", dest="max_iter", type=int)
    e.add_argument("--rel-tol", dest="rel_tol", type=float)
    e.add_argument("--json", action="store_true")

    x = sub.add_parser("experiment", parents=[common], argument_default=argparse.SUPPRESS,
                       help="replay a Monte Carlo protocol")
    x.add_argument("--protocol", choices=PROTOCOLS)
    x.add_argument("--runs", type=int)
    x.add_argument("--seed", type=int)
    x.add_argument("--out")
    x.add_argument("--values", type=float, nargs="+", help="override the sweep points")
    x.add_argument("--criteria", nargs="+", choices=CRITERIA)
    x.add_argument("--data", help="Old Faithful CSV")
    x.add_argument("--mode", choices=OLD_FAITHFUL_MODES)
    x.add_argument("--nu", type=float)
    x.add_argument("--lmax", type=int)
    x.add_argument("--restarts", type=int)
    x.add_argument("--max-iter", dest="max_iter", type=int)
    x.add_argument("--rel-tol", dest="rel_tol", type=float)
    x.add_argument("--threads", type=int)
    return parser


def load_config_file(path, command: str) -> dict:
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise UsageError("config file must hold a mapping")
    values = {k: v for k, v in raw.items() if k not in DEFAULTS}
    nested = raw.get(command) or {}
    if not isinstance(nested, dict):
        raise UsageError(f"config section {command!r} must be a mapping")
    values.update(nested)
    values = {k.replace("-", "_"): v for k, v in values.items()}
    unknown = set(values) - set(DEFAULTS[command])
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {sorted(unknown)}")
    return values


def resolve_config(command: str, flags: dict) -> dict:
    """Defaults, then config file, then explicit flags."""
    resolved = dict(DEFAULTS[command])
    if "config" in flags:
        resolved.update(load_config_file(flags["config"], command))
    resolved.update({k: v for k, v in flags.items() if k in resolved})
    return resolved


def _generator_spec(cfg: dict, seed: int) -> GeneratorSpec:
    base = load_csv(cfg["base"]) if cfg.get("base") else None
    return GeneratorSpec(
        kind=cfg["kind"],
        n_per_cluster=tuple(int(n) for n in cfg["n_per_cluster"]),
        outlier_fraction=float(cfg["alpha"]),
        outlier_count=cfg["outlier_count"],
        r=int(cfg["r"]),
        overlap_pct=float(cfg["overlap"]),
        seed=int(seed),
        base=base,
    )


def _em_config(cfg: dict) -> EmConfig:
    return EmConfig(max_iter=int(cfg["max_iter"]), rel_tol=float(cfg["rel_tol"]), seed=int(cfg["seed"]))


def fmt(x) -> str:
    """Four significant digits for human-readable output."""
    return f"{x:.4g}" if isinstance(x, float) else str(x)


def cmd_generate(cfg: dict) -> int:
    if not cfg["out"]:
        raise UsageError("generate needs --out")
    data = generate(_generator_spec(cfg, cfg["seed"]))
    out = Path(cfg["out"])
    save_csv(data, out)
    sidecar = out.with_name(out.name + ".json")
    sidecar.write_text(json.dumps({"config": cfg}, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {data.n} rows x {data.r} features to {out}")
    return EXIT_OK


def cmd_enumerate(cfg: dict) -> int:
    if cfg["data"]:
        data = load_csv(cfg["data"], standardize=bool(cfg["standardize"]))
    else:
        data = generate(_generator_spec(cfg, cfg["data_seed"]))
    config = EnumerationConfig(
        l_max=int(cfg["lmax"]), l_min=int(cfg["lmin"]), nu=cfg["nu"], criterion=cfg["criterion"],
        em_config=_em_config(cfg), restarts=int(cfg["restarts"]),
    )
    result = enumerate_clusters(data, config)
    rows = [s.to_dict() for s in result.scores]
    if cfg["json"]:
        # invalid candidates carry NaN; strict JSON has no NaN literal
        for row in rows:
            for key in ("fidelity", "penalty", "total"):
                if row[key] != row[key]:
                    row[key] = None
        payload = {"k_hat": result.k_hat, "criterion": config.criterion, "nu": config.resolved_nu,
                   "scores": rows, "config": cfg}
        print(json.dumps(payload, indent=2, sort_keys=True))
        return EXIT_OK
    print(f"criterion {config.criterion}  nu {fmt(config.resolved_nu)}  N {data.n}  r {data.r}")
    print(f"{'l':>3} {'fidelity':>12} {'penalty':>12} {'total':>12} valid")
    for s in rows:
        print(f"{s['l']:>3} {fmt(s['fidelity']):>12} {fmt(s['penalty']):>12} "
              f"{fmt(s['total']):>12} {'yes' if s['valid'] else 'no: ' + s['reason']}")
    print(f"K_hat = {result.k_hat}")
    return EXIT_OK


def cmd_experiment(cfg: dict) -> int:
    if not cfg["protocol"]:
        raise UsageError("experiment needs --protocol")
    if not cfg["out"]:
        raise UsageError("experiment needs --out")
    if int(cfg["runs"]) < 1:
        raise UsageError("--runs must be positive")
    if cfg["protocol"] == "oldfaithful" and not cfg["data"]:
        raise UsageError("the oldfaithful protocol needs --data pointing at the Old Faithful CSV")
    if cfg["threads"] is not None and int(cfg["threads"]) < 1:
        raise UsageError("--threads must be positive")
    workers = int(cfg["threads"]) if cfg["threads"] is not None else default_workers()
    settings = FitSettings(
        nu=float(cfg["nu"]), l_max=cfg["lmax"], restarts=int(cfg["restarts"]),
        em=EmConfig(max_iter=int(cfg["max_iter"]), rel_tol=float(cfg["rel_tol"])),
    )
    common = dict(runs=int(cfg["runs"]), master_seed=int(cfg["seed"]), criteria=tuple(cfg["criteria"]),
                  settings=settings, workers=workers)
    values = cfg["values"]
    protocol = cfg["protocol"]
    if protocol == "table1":
        report = replay_table1(*( [[int(v) for v in values]] if values else []), **common)
    elif protocol == "outliers":
        report = replay_outlier_sweep(*([values] if values else []), **common)
    elif protocol == "features":
        report = replay_feature_sweep(*([[int(v) for v in values]] if values else []), **common)
    elif protocol == "overlap":
        report = replay_overlap_sweep(*([values] if values else []), **common)
    elif protocol == "heterogeneity":
        report = replay_heterogeneity_sweep(*([[int(v) for v in values]] if values else []), **common)
    else:
        kwargs = {"alphas": values} if values else {}
        report = replay_old_faithful(cfg["data"], cfg["mode"], **kwargs, **common)
    report.config["cli"] = cfg
    csv_path, json_path = report.write(cfg["out"], protocol)
    print(f"{report.sweep_variable:>12} {'criterion':>9} {'p_det':>8} {'mae':>8} {'p_under':>8} {'p_over':>8}")
    for value, crit, m in report.rows():
        print(f"{fmt(value):>12} {crit:>9} {fmt(m.p_det):>8} {fmt(m.mae):>8} "
              f"{fmt(m.p_under):>8} {fmt(m.p_over):>8}")
    print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "enumerate": cmd_enumerate, "experiment": cmd_experiment}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    flags = vars(args)
    command = flags.pop("command")
    logging.basicConfig(level=logging.INFO if flags.pop("verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(command, flags)
        return COMMANDS[command](cfg)
    except (UsageError, InvalidArgumentError, IngestionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RobustEnumError as exc:
        print(f"computation failed: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
