"""Command line entry point: ``cwiener run | list | validate``.

Exit codes: 0 all asserted criteria pass, 1 some criterion fails,
2 configuration or specification error, 3 a numerical guard fired.
"""

import argparse
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import load_config
from .errors import ConfigError, InvalidSpecError, NumericalGuardError
from .io import write_csv, write_density_csv, write_drift_csv, write_ensemble_summary, write_json, write_real_drift_csv, write_wave_csv
from .scenarios import PIPELINES, run_scenario

log = logging.getLogger("cwiener")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_GUARD = 0, 1, 2, 3


def _provenance(cfg):
    return {
        "package": "cwiener",
        "version": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
        "seed": cfg.ensemble.seed,
        "rng": "philox4x64 keyed by (seed, step, channel, component), counter = path index",
    }


def write_artifacts(cfg, result, out_dir):
    """Write manifest, report and data tables; returns the output directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    # the output location is left out so a relocated run stays byte-identical
    manifest = cfg.model_dump(mode="json", exclude={"provenance", "outputs"})
    manifest["provenance"] = _provenance(cfg)
    write_json(out / "manifest.json", manifest)
    write_json(out / "report.json", result.report())
    for name, dens in sorted(result.densities.items()):
        write_density_csv(out / "densities" / f"{name}.csv", dens)
    for name, wave in sorted(result.waves.items()):
        write_wave_csv(out / "waves" / f"{name}.csv", wave)
    for name, drift in sorted(result.drifts.items()):
        write_drift_csv(out / "drift" / f"{name}.csv", drift)
    for name, (grid, values) in sorted(result.real_drifts.items()):
        write_real_drift_csv(out / "drift" / f"{name}.csv", grid, values)
    for name, (ens, grid) in sorted(result.ensembles.items()):
        write_ensemble_summary(out / "ensembles" / f"{name}.csv", ens, grid)
    for name, (header, columns) in sorted(result.curves.items()):
        write_csv(out / "curves" / f"{name}.csv", header, columns)
    return out


def _cmd_run(args):
    overrides = list(args.override or [])
    if args.seed is not None:
        overrides.append(f"ensemble.seed={args.seed}")
    if args.out is not None:
        overrides.append(f"outputs.directory={args.out!s}")
    cfg = load_config(args.config, overrides)
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1", key_path="threads")
    log.info("running %s (seed %d)", cfg.scenario, cfg.ensemble.seed)
    result = run_scenario(cfg, threads=args.threads)
    out = write_artifacts(cfg, result, cfg.outputs.directory)
    for c in result.criteria:
        flag = "PASS" if c.passed else "FAIL"
        note = "" if c.asserted else " (reported)"
        print(f"{flag} {cfg.scenario}:{c.name} value={c.value:.6g} {c.relation} {c.threshold:.6g}{note}")
    print(f"{'PASS' if result.passed else 'FAIL'} {cfg.scenario} -> {out}")
    return EXIT_OK if result.passed else EXIT_FAIL


def _cmd_list(args):
    for name in sorted(PIPELINES):
        print(f"{name}\t{PIPELINES[name].description}")
    return EXIT_OK


def _cmd_validate(args):
    cfg = load_config(args.config, args.override)
    print(f"ok {cfg.scenario}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="cwiener", description="Complex-diffusion path sampling scenarios.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario config file or built-in preset")
    run.add_argument("config")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", type=Path)
    run.add_argument("--override", action="append", metavar="KEY=VALUE", help="dotted key, JSON value")
    run.add_argument("--threads", type=int, default=1, help="worker threads; outputs do not depend on it")
    run.set_defaults(func=_cmd_run)

    ls = sub.add_parser("list", help="list built-in scenarios")
    ls.set_defaults(func=_cmd_list)

    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("config")
    val.add_argument("--override", action="append", metavar="KEY=VALUE")
    val.set_defaults(func=_cmd_validate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvalidSpecError as exc:
        print(f"invalid specification: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalGuardError as exc:
        print(f"numerical guard '{exc.guard}': {exc}", file=sys.stderr)
        return EXIT_GUARD


if __name__ == "__main__":
    sys.exit(main())
