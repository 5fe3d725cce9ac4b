"""``selectlab`` command line.

Exit status 0 on success, 2 for configuration or usage problems (including a
missing run directory), 3 when a replication hits a numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import artifacts, config, svg
from .diagnose import diagnose_run
from .harness import ReplicationError, run_experiment, run_thompson_comparison
from .model import ConfigError, InputError
from .posterior import NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
DEFAULT_OUT = "runs"


def _out_dir(args) -> Path:
    # --out beats SELECTLAB_OUT, which beats the built-in default
    return Path(args.out or os.environ.get("SELECTLAB_OUT") or DEFAULT_OUT)


def _overrides(args) -> dict:
    out = {}
    for item in args.set or ():
        key, value = config.parse_override(item)
        out[key] = value
    for flag, key in config.SHORTCUTS.items():
        v = getattr(args, flag, None)
        if v is not None:
            out[key] = str(v)
    return out


def _run_flags(p):
    p.add_argument("config", nargs="?", help="config file path or bundled config name")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    p.add_argument("--replications", type=int)
    p.add_argument("--n-steps", dest="n_steps", type=int)
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (output does not depend on it)")
    p.add_argument("--out", help="output root (default: $SELECTLAB_OUT or ./runs)")
    p.add_argument("--force", action="store_true", help="replace an existing run directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="selectlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    _run_flags(sub.add_parser("simulate", help="run replications of one strategy"))
    _run_flags(sub.add_parser("compare-thompson", help="RML against Thompson sampling on one covariate"))
    d = sub.add_parser("diagnose", help="second-moment and MLE report for a run directory")
    d.add_argument("run_dir")
    p = sub.add_parser("plot", help="regenerate the SVG figures of a run directory from its CSVs")
    p.add_argument("run_dir")
    return parser


def _stage(args, command, settings):
    digest = config.config_hash(settings)
    return artifacts.StagedRun(_out_dir(args), artifacts.run_dir_name(command, digest), args.force), digest


def _finish(stage, command, settings, digest, seed) -> Path:
    svg.render_run(stage.path)
    artifacts.write_manifest(stage.path, command, settings, digest, seed)
    return stage.commit()


def cmd_simulate(args) -> int:
    settings = config.load_settings(args.config, config.SIMULATE_DEFAULTS, _overrides(args))
    cfg = config.build_experiment(settings)
    stage, digest = _stage(args, "simulate", settings)
    try:
        traces, agg = run_experiment(cfg, jobs=args.jobs)
        artifacts.write_simulation(stage.path, cfg, traces, agg)
        final = _finish(stage, "simulate", settings, digest, cfg.master_seed)
    except BaseException:
        stage.abort()
        raise
    print(final)
    return EXIT_OK


def cmd_compare(args) -> int:
    settings = config.load_settings(args.config, config.COMPARE_DEFAULTS, _overrides(args))
    rml, thompson = config.build_pair(settings)
    stage, digest = _stage(args, "compare-thompson", settings)
    try:
        result = run_thompson_comparison(rml, thompson, jobs=args.jobs)
        artifacts.write_comparison(stage.path, rml, result)
        final = _finish(stage, "compare-thompson", settings, digest, rml.master_seed)
    except BaseException:
        stage.abort()
        raise
    print(final)
    return EXIT_OK


def _existing_run(path) -> Path:
    run = Path(path)
    if not (run / artifacts.MANIFEST).is_file():
        raise FileNotFoundError(f"{run} is not a run directory (no {artifacts.MANIFEST})")
    return run


def cmd_diagnose(args) -> int:
    run = _existing_run(args.run_dir)
    sys.stdout.write(diagnose_run(run, run / "diagnose"))
    return EXIT_OK


def cmd_plot(args) -> int:
    run = _existing_run(args.run_dir)
    for p in svg.render_run(run):
        print(p)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "compare-thompson": cmd_compare,
    "diagnose": cmd_diagnose,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except ReplicationError as exc:
        print(f"error: replication {exc.rep_index} failed at step {exc.step}: {exc.cause}", file=sys.stderr)
        return EXIT_NUMERIC
    except NumericalError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, InputError, artifacts.RunDirExists, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
