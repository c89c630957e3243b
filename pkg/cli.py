# cli.py

"""
Command-line front end: forward solves, data synthesis, convergence analysis
and inversion, each writing into a run directory with a shared manifest.

    python cli.py synth   --scenario scenarios/interval_gaussian.yaml --out runs/demo
    python cli.py invert  --scenario scenarios/interval_gaussian.yaml --out runs/demo
    python cli.py analyze --scenario scenarios/interval_gaussian.yaml --out runs/demo --check-data
    python cli.py forward --scenario scenarios/interval_gaussian.yaml

Exit status: 0 success (possibly with warnings), 1 usage/configuration/I-O
error, 2 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np
import pandas as pd
import scipy
import yaml

import convergence
import discretization
import experiments
import inverse_series
from errors import (
    ConfigurationError,
    DimensionError,
    DomainError,
    NonConvergenceError,
    NuOverflowError,
    ResonanceError,
)
from forward_series import (
    ForwardTermCache,
    born_partial_sum,
    check_contraction_conditions,
    map_ordered,
)

logger = logging.getLogger("born_cli")

PROJECT = "kerr-born-series"
__version__ = "0.1.0"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NONCONVERGENCE = 2

FLOAT_FORMAT = "%.17g"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigurationError(message)


# ------------------------------------------------------------------
# 1. RUN CONFIG
# ------------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    command: str
    scenario_path: Path
    out: Path | None
    order: int | None = None
    tau: float | None = None
    noise: float | None = None
    seed: int | None = None
    synthesis_resolution: int | None = None
    inversion_resolution: int | None = None
    threads: int = 1
    check_data: bool = False
    verbosity: int = 0

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        if args.threads is not None and args.threads < 1:
            raise ConfigurationError(f"--threads must be >= 1, got {args.threads}")
        return cls(
            command=args.command,
            scenario_path=Path(args.scenario),
            out=Path(args.out) if args.out else None,
            order=args.order,
            tau=args.tau,
            noise=args.noise,
            seed=args.seed,
            synthesis_resolution=args.synthesis_resolution,
            inversion_resolution=args.inversion_resolution,
            threads=args.threads or os.cpu_count() or 1,
            check_data=bool(getattr(args, "check_data", False)),
            verbosity=args.verbose,
        )

    def overrides(self) -> dict:
        return {
            "M": self.order,
            "tau": self.tau,
            "noise": self.noise,
            "seed": self.seed,
            "synthesis_resolution": self.synthesis_resolution,
            "inversion_resolution": self.inversion_resolution,
        }

    def scenario(self) -> experiments.Scenario:
        """Scenario file plus CLI overrides, validated by the same rules."""
        base = experiments.load_scenario(self.scenario_path)
        return experiments.with_overrides(base, **self.overrides())

    def output_dir(self) -> Path:
        if self.out is not None:
            return self.out
        run_id = f"BornSim_{self.command}_{datetime.now().strftime('%Y%m%d_%H%M%S')}"
        return Path("runs") / run_id


# ------------------------------------------------------------------
# 2. OUTPUT HELPERS
# ------------------------------------------------------------------

def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, discretization.SourceSpec):
        return obj.to_dict()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default)


def write_json(path: Path, obj) -> None:
    path.write_text(dumps(obj) + "\n", encoding="utf-8")


def write_csv(path: Path, df: pd.DataFrame) -> None:
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def config_hash(scenario: experiments.Scenario) -> str:
    canonical = json.dumps(experiments.scenario_to_dict(scenario), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def design_parameters(scenario: experiments.Scenario) -> dict:
    return {
        "scheme_interval": discretization.SCHEME_INTERVAL,
        "scheme_disk": discretization.SCHEME_DISK,
        "scheme_order": discretization.SCHEME_ORDER,
        "resonance_tol": discretization.RESONANCE_TOL,
        "mu_max_rows": discretization.MU_MAX_ROWS,
        "point_source": "discrete delta on a boundary node, hat-split between disk nodes",
        "sign_convention": "op_A(v, alpha) = -k^2 int G alpha v; T(v) = u0 + A v + B v^3",
        "nu_exact_through": convergence.EXACT_LIMIT,
        "nu_sequence_order": convergence.DEFAULT_ORDER,
        "growth_estimator": "tail-ratio",
        "tail_safety": convergence.TAIL_SAFETY,
        "pinv_norm": "1 / smallest retained singular value",
        "data_norm": "uniformly weighted l2 (RMS) over source x receiver",
        "zeta_norm": "nodal sup norm",
        "tau": scenario.tau,
        "M": scenario.M,
        "composition_guard": inverse_series.MAX_ORDER,
        "min_mesh_ratio": experiments.MIN_MESH_RATIO,
        "forward_method": scenario.forward.method,
        "forward_tol": scenario.forward.tol,
        "noise": scenario.noise,
        "seed": scenario.seed,
    }


def update_manifest(out: Path, config: RunConfig, scenario: experiments.Scenario, files: list[str]) -> None:
    """Merge this run into <out>/manifest.json; no timestamps, so reruns are byte-identical."""
    path = out / "manifest.json"
    manifest = json.loads(path.read_text(encoding="utf-8")) if path.exists() else {}
    manifest.update({
        "project": PROJECT,
        "project_version": __version__,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pandas": pd.__version__,
            "pyyaml": yaml.__version__,
        },
    })
    manifest.setdefault("runs", {})[config.command] = {
        "config_hash": config_hash(scenario),
        "scenario": experiments.scenario_to_dict(scenario),
        "overrides": {k: v for k, v in config.overrides().items() if v is not None},
        "design_parameters": design_parameters(scenario),
        "files": sorted(files),
    }
    write_json(path, manifest)


def _prepare_out(config: RunConfig) -> Path:
    out = config.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _finish(out: Path, config: RunConfig, scenario, files: dict) -> None:
    """Write every output in one go, then the scenario dump and manifest."""
    for name, payload in files.items():
        if isinstance(payload, pd.DataFrame):
            write_csv(out / name, payload)
        else:
            write_json(out / name, payload)
    (out / "scenario.yaml").write_text(
        yaml.safe_dump(experiments.scenario_to_dict(scenario), sort_keys=False), encoding="utf-8"
    )
    update_manifest(out, config, scenario, list(files) + ["scenario.yaml"])
    logger.info("Wrote %s to %s", ", ".join(sorted(files)), out)


def _data_path(config: RunConfig) -> Path:
    if config.out is None:
        raise ConfigurationError("--out must point at a run directory containing phi.csv")
    path = config.out / "phi.csv"
    if not path.exists():
        raise ConfigurationError(f"data file {path} not found; run 'synth' into this directory first")
    return path


# ------------------------------------------------------------------
# 3. SUBCOMMANDS
# ------------------------------------------------------------------

def cmd_forward(config: RunConfig) -> int:
    scenario = config.scenario()
    grid = discretization.build_grid(scenario.domain, scenario.synthesis_resolution)
    zeta = experiments.true_susceptibility(scenario, grid)
    sources = experiments.scenario_sources(scenario)
    backgrounds = experiments.background_fields(grid, sources, config.threads)
    mus = {}
    for bg in backgrounds:
        mus.setdefault(bg.k, bg.solver.mu)
    cache = ForwardTermCache()

    def one(item):
        s, bg = item
        u, report = experiments.forward_solve(zeta, bg, scenario.forward, mu=mus[bg.k])
        _, terms = born_partial_sum(zeta, bg, scenario.forward.born_terms, cache, reference=u)
        terms.insert(0, "source", s)
        snapshot = discretization.field_frame(grid, bg.values, "u0")
        snapshot["u"] = u
        snapshot.insert(0, "source", s)
        conditions = check_contraction_conditions(zeta, bg, mus[bg.k], gamma=1.0)
        return terms, snapshot, {"source": bg.source, "report": report.to_dict(), "conditions": conditions.to_dict()}

    results = map_ordered(one, list(enumerate(backgrounds)), config.threads)
    terms = pd.concat([r[0] for r in results], ignore_index=True)
    fields = pd.concat([r[1] for r in results], ignore_index=True)
    summary = {
        "grid": discretization.grid_metadata(grid),
        "mu": {str(k): v for k, v in mus.items()},
        "sources": [r[2] for r in results],
    }
    out = _prepare_out(config)
    _finish(out, config, scenario, {"terms.csv": terms, "fields.csv": fields, "fixed_point.json": summary})
    return EXIT_OK


def cmd_synth(config: RunConfig) -> int:
    scenario = config.scenario()
    data = experiments.synthesize(scenario, config.threads)
    out = _prepare_out(config)
    _finish(out, config, scenario, {"phi.csv": experiments.phi_frame(data)})
    return EXIT_OK


def cmd_invert(config: RunConfig) -> int:
    scenario = config.scenario()
    data = experiments.read_phi(_data_path(config))
    result = experiments.invert(scenario, data, config.threads)
    truth = experiments.true_susceptibility(scenario, result.grid)
    diagnostics = result.diagnostics.to_dict()
    diagnostics["grid"] = discretization.grid_metadata(result.grid)
    report = {
        "scenario": scenario.name,
        "expectation": scenario.expectation,
        "errors": result.errors.to_dict(),
        "convergence": result.report.to_dict(),
        "radius_exceeded": result.diagnostics.radius_exceeded,
    }
    if result.diagnostics.radius_exceeded:
        logger.warning("inversion finished outside the guaranteed radius of convergence")
    out = _prepare_out(config)
    _finish(out, config, scenario, {
        "recon.csv": experiments.recon_frame(result.grid, result.zeta, truth),
        "diagnostics.json": diagnostics,
        "report.json": report,
        "crosssection.csv": result.errors.crosssection,
    })
    return EXIT_OK


def cmd_analyze(config: RunConfig) -> int:
    scenario = config.scenario()
    data = experiments.read_phi(_data_path(config)) if config.check_data else None
    report, grid, _, pinv, _ = experiments.analyze(scenario, data, config.threads)
    seq = convergence.nu_sequence(report.nu0, report.sequence_order)
    payload = report.to_dict()
    payload.update({
        "grid": discretization.grid_metadata(grid),
        "effective_rank": pinv.rank,
        "tau": pinv.tau,
        "nu_head": [float(v) for v in seq.values[:8]],
    })
    out = _prepare_out(config)
    _finish(out, config, scenario, {"convergence.json": payload})
    return EXIT_OK


COMMANDS = {
    "forward": cmd_forward,
    "synth": cmd_synth,
    "invert": cmd_invert,
    "analyze": cmd_analyze,
}


# ------------------------------------------------------------------
# 4. ENTRY POINT
# ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cli.py", description="Born series for the Kerr-nonlinear Helmholtz equation.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("forward", "fixed-point solve and Born partial sums"),
        ("synth", "synthesize scattering data phi.csv"),
        ("invert", "inverse Born series reconstruction from <out>/phi.csv"),
        ("analyze", "convergence constants and radii"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--scenario", required=True, help="scenario YAML file")
        p.add_argument("--out", help="run directory (default runs/BornSim_<command>_<timestamp>)")
        p.add_argument("--order", type=int, help="inverse series order M")
        p.add_argument("--tau", type=float, help="relative SVD truncation threshold")
        p.add_argument("--noise", type=float, help="relative additive Gaussian noise on phi")
        p.add_argument("--seed", type=int, help="noise seed")
        p.add_argument("--synthesis-resolution", type=int)
        p.add_argument("--inversion-resolution", type=int)
        p.add_argument("--threads", type=int, help="worker cap (default: all cores)")
        p.add_argument("-v", "--verbose", action="count", default=0)
        if name == "analyze":
            p.add_argument("--check-data", action="store_true", help="test |K1+ phi| < r for <out>/phi.csv")
    return parser


def _configure_logging(verbosity: int) -> None:
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbosity, logging.DEBUG)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(level)
    logging.captureWarnings(True)


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        config = RunConfig.from_args(args)
        _configure_logging(config.verbosity)
        return COMMANDS[config.command](config)
    except NonConvergenceError as exc:
        logger.error("non-convergence: %s", exc)
        return EXIT_NONCONVERGENCE
    except (ConfigurationError, DimensionError, DomainError, ResonanceError, NuOverflowError, OSError) as exc:
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
