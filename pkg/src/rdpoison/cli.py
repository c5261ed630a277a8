"""Rate-distortion environment poisoning experiments from the command line.

Exit codes: 0 success, 1 experiment or claim failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import io
import json
import sys
from pathlib import Path

from . import __version__, envs
from .experiments import ConfigError, json_text, load_config, run_experiment
from .verify import GROUPS, verify_all

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

# subcommand -> experiments it may run (first is the default)
SUBCOMMANDS = {
    "plan": ("thm51_trace", "table2"),
    "attack": ("rd_attack_planning",),
    "curve": ("budget_regret", "budget_mi"),
    "qlearn": ("blockworld_qlearning",),
    "permute": ("permutation_attack",),
    "fano": ("fano_check",),
    "surface": ("value_surface",),
}


def config_hash(config: dict) -> str:
    body = {k: config[k] for k in ("experiment", "params", "seed")}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def _csv_to_records(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))


def write_artifacts(config: dict, result, out_dir: Path, fmt: str = "csv") -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, text in result.files.items():
        if Path(name).name != name:
            raise ValueError(f"artifact name {name!r} must be a bare file name")
        if fmt == "json" and name.endswith(".csv"):
            name, text = name[:-4] + ".json", json_text(_csv_to_records(text))
        (out_dir / name).write_text(text)
        files[name] = hashlib.sha256(text.encode()).hexdigest()
    manifest = {
        "experiment": config["experiment"],
        "config": config,
        "config_sha256": config_hash(config),
        "seed": config["seed"],
        "version": __version__,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "files": files,
    }
    (out_dir / "manifest.json").write_text(json_text(manifest))
    return manifest


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def build_config(args, experiment: str | None) -> dict:
    raw = _read_json(args.config) if getattr(args, "config", None) else {}
    if "experiment" not in raw:
        raw = {"experiment": experiment, "params": raw}
    elif experiment and args.command != "run" and raw["experiment"] not in SUBCOMMANDS[args.command]:
        raise ConfigError(f"experiment: {raw['experiment']!r} cannot run under `{args.command}`")
    if raw.get("experiment") is None:
        raise ConfigError("experiment: missing")
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["output_dir"] = args.out
    if args.grid_step is not None:
        params = raw.setdefault("params", {})
        if raw["experiment"] in ("budget_regret", "budget_mi"):
            params["grid_step"] = args.grid_step
        elif raw["experiment"] == "value_surface":
            params["grid_resolution"] = int(round(1.0 / args.grid_step)) + 1
    return load_config(raw)


def cmd_experiment(args) -> int:
    if args.command == "run":
        experiment = None
    elif args.command == "plan":
        experiment = args.experiment
    elif args.command == "curve":
        experiment = {"max_regret": "budget_regret", "min_mi": "budget_mi"}[args.mode]
    else:
        experiment = SUBCOMMANDS[args.command][0]
    config = build_config(args, experiment)
    result = run_experiment(config)
    out = Path(config["output_dir"])
    write_artifacts(config, result, out, args.format)
    print(result.summary)
    print(f"artifacts written to {out}/")
    return EXIT_OK


def cmd_env(args) -> int:
    if args.name == "block_world":
        spec = envs.block_world_env(args.alpha)
    else:
        spec = envs.ENVIRONMENTS[args.name]()
    text = json_text(spec.to_dict())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{args.name}.json").write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_verify(args) -> int:
    overrides = _read_json(args.config) if args.config else {}
    if not isinstance(overrides, dict) or set(overrides) - set(GROUPS):
        raise ConfigError(f"verify config must map claim groups {sorted(GROUPS)} to parameter objects")
    claims = verify_all(args.filter, overrides)
    for c in claims:
        print(c.line())
    failed = sum(not c.passed for c in claims)
    print(f"{len(claims) - failed}/{len(claims)} claims passed")
    return EXIT_FAIL if failed else EXIT_OK


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config: an experiment config or its params object")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--grid-step", type=float, dest="grid_step")
    p.add_argument("--format", choices=("csv", "json"), default="csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rdpoison", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    env = sub.add_parser("env", help="environment utilities")
    env_sub = env.add_subparsers(dest="env_command", required=True)
    dump = env_sub.add_parser("dump", help="print an environment as JSON")
    dump.add_argument("name", choices=sorted(envs.ENVIRONMENTS))
    dump.add_argument("--alpha", type=float, default=0.8, help="slip parameter for block_world")
    dump.add_argument("--out")
    dump.set_defaults(func=cmd_env)

    helps = {
        "plan": "counterexample tables and the extended policy iteration trace",
        "attack": "regret and Fano certificate of one attack channel",
        "curve": "regret / mutual information versus budget",
        "qlearn": "block-world Q-learning victim under the random attack",
        "permute": "model-based victim under random state relabelling",
        "fano": "Fano certificate of a channel",
        "surface": "random-policy expected value surface",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        _common(p)
        if name == "plan":
            p.add_argument("--experiment", choices=SUBCOMMANDS["plan"], default="thm51_trace")
        if name == "curve":
            p.add_argument("--mode", choices=("max_regret", "min_mi"), default="max_regret")
        p.set_defaults(func=cmd_experiment)

    run = sub.add_parser("run", help="run any experiment from a full config file")
    _common(run)
    run.set_defaults(func=cmd_experiment)

    ver = sub.add_parser("verify", help="run the golden-claim battery")
    ver.add_argument("--filter", nargs="+", choices=sorted(GROUPS), help="claim groups to run")
    ver.add_argument("--config", help="JSON object mapping claim groups to parameter overrides")
    ver.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
