import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, List, Optional, Sequence

from dotenv import load_dotenv

# Ensure internal module path is correct
sys.path.append(str(Path(__file__).resolve().parent))

from logger import setup_logging, level_from_name
from marginals import QuantileDomainError
from copulas import CopulaSpec, calibrate_parameter, numeric_kendall_tau
from joint_demand import JointDemandModel
from pooling import dedicated_total, find_thresholds, pooling_curve
from models import ConfigError, CurveMethod, ScenarioConfig
from quadrature import NumericalError
from experiments import preset, preset_names, run_grid, write_run
from exports import curve_to_csv, format_number, thresholds_to_json
from result_store import InsufficientStorageError, ResultStore, ResultWriteError

logger = logging.getLogger("PoolingCLI")

# --- Exit codes ---
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2

ENV_PATH = Path(__file__).resolve().parent.parent / ".env"

class UsageError(Exception):
    """Bad flags or arguments (exit code 1)."""
    pass

class _ArgumentParser(argparse.ArgumentParser):
    """Raises UsageError instead of printing usage and exiting with code 2."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")

# --- Argument helpers ---

def _load_json(text: str, what: str) -> Any:
    """Inline JSON, or a path to a JSON file."""
    source = text
    if not text.lstrip().startswith(("{", "[")) and Path(text).is_file():
        source = Path(text).read_text(encoding="utf-8")
    try:
        return json.loads(source)
    except json.JSONDecodeError as e:
        raise UsageError(f"malformed {what} JSON: {e}")

def _parse_grid(text: str) -> List[float]:
    try:
        lo_s, hi_s, n_s = text.split(":")
        lo, hi, n = float(lo_s), float(hi_s), int(n_s)
    except ValueError:
        raise UsageError(f"--grid expects lo:hi:n, got {text!r}")
    if n < 1 or not 0.0 < lo <= hi < 1.0 or (n > 1 and lo == hi):
        raise UsageError(f"--grid needs 0 < lo < hi < 1 and n >= 1, got {text!r}")
    if n == 1:
        return [lo]
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n - 1)] + [hi]

def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{name} must be an integer, got {raw!r}")

def _print(key: str, value: float):
    print(f"{key}={format_number(value)}")

# --- Subcommands ---

def cmd_tau(args: argparse.Namespace) -> int:
    copula = CopulaSpec.from_dict(_load_json(args.copula, "copula")).build()
    _print("tau", copula.kendall_tau())
    if args.numeric:
        _print("numeric_tau", numeric_kendall_tau(copula, args.numeric, args.seed))
    return EXIT_OK

def cmd_calibrate(args: argparse.Namespace) -> int:
    copula = calibrate_parameter(args.family, args.tau, args.df)
    if copula.theta is None:
        print(f"theta=None family={copula.family.value}")
    else:
        print(f"theta={round(copula.theta, 12)!r}")
    return EXIT_OK

def cmd_quantile(args: argparse.Namespace) -> int:
    model = JointDemandModel.from_spec(_load_json(args.model, "model"))
    if args.mc:
        estimate = model.sum_quantile_mc(args.t, args.mc, args.seed)
    else:
        estimate = model.sum_quantile(args.t)
    dedicated = dedicated_total(model, args.t)
    _print("dedicated", dedicated)
    _print("pooled", estimate.point)
    _print("effect", estimate.point - dedicated)
    if args.mc:
        _print("ci_halfwidth", estimate.ci_halfwidth)
    return EXIT_OK

def cmd_curve(args: argparse.Namespace) -> int:
    model = JointDemandModel.from_spec(_load_json(args.model, "model"))
    grid = _parse_grid(args.grid)
    method = CurveMethod.MONTE_CARLO if args.mc else CurveMethod.QUADRATURE
    curve = pooling_curve(model, grid, method, n_samples=args.mc or 0, seed=args.seed)
    out = Path(args.out)
    path = ResultStore(out.parent).write_text(out.name, curve_to_csv(curve))
    for index, reason in sorted(curve.missing.items()):
        sys.stderr.write(f"missing point t={grid[index]}: {reason}\n")
    print(str(path))
    return EXIT_OK

def cmd_thresholds(args: argparse.Namespace) -> int:
    model = JointDemandModel.from_spec(_load_json(args.model, "model"))
    report = find_thresholds(model, args.scan_points, args.zero_tol)
    sys.stdout.write(thresholds_to_json(report))
    return EXIT_OK

def cmd_run(args: argparse.Namespace) -> int:
    if args.config:
        cfg = ScenarioConfig.from_dict(_load_json(args.config, "config"))
    else:
        cfg = preset(args.preset)
    workers = args.workers if args.workers is not None else _env_int("POOLING_WORKERS", 1)
    if workers < 1:
        raise UsageError(f"worker count must be >= 1, got {workers}")

    results = run_grid(cfg, workers=workers)
    report = write_run(results, cfg, ResultStore(args.out))
    failed = sum(1 for r in results if not r.ok)
    print(f"cells={len(results)} failed={failed} checks_passed={str(report.all_passed).lower()} out={args.out}")
    return EXIT_OK

def cmd_preset_list(args: argparse.Namespace) -> int:
    for name in preset_names():
        print(name)
    return EXIT_OK

# --- Parser ---

def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="copula-pooling", description="Inventory pooling under copula-dependent demand.")
    parser.add_argument("--log-file", default=None, help="JSON log file (default: stderr, or POOLING_LOG_FILE)")
    parser.add_argument("--log-level", default=None, help="DEBUG/INFO/WARNING/ERROR (default: POOLING_LOG_LEVEL or WARNING)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_ArgumentParser)
    sub.required = True

    p = sub.add_parser("tau", help="Kendall's tau of a copula spec")
    p.add_argument("--copula", required=True, help='copula JSON, e.g. {"family":"frank","alpha":100}')
    p.add_argument("--numeric", type=int, default=0, help="also estimate tau by Monte Carlo with N samples")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_tau)

    p = sub.add_parser("calibrate", help="copula parameter for a target Kendall's tau")
    p.add_argument("--family", required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--df", type=float, default=None, help="degrees of freedom (student)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("quantile", help="dedicated, pooled and effect at one margin ratio")
    p.add_argument("--model", required=True, help='model JSON {"m1":...,"m2":...,"copula":...} or a file path')
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--mc", type=int, default=0, help="Monte Carlo sample size (default: quadrature)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_quantile)

    p = sub.add_parser("curve", help="pooling curve over a grid, written as CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--grid", required=True, help="lo:hi:n")
    p.add_argument("--out", required=True)
    p.add_argument("--mc", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("thresholds", help="sign changes of the pooling effect as JSON")
    p.add_argument("--model", required=True)
    p.add_argument("--scan-points", type=int, default=199)
    p.add_argument("--zero-tol", type=float, default=1e-5)
    p.set_defaults(func=cmd_thresholds)

    p = sub.add_parser("run", help="run a scenario grid")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--config", help="scenario config JSON or file path")
    source.add_argument("--preset", help="named preset (see preset-list)")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=None, help="worker processes (default: POOLING_WORKERS or 1)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("preset-list", help="list named presets")
    p.set_defaults(func=cmd_preset_list)
    return parser

def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv(dotenv_path=ENV_PATH)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        sys.stderr.write(f"error: {e}\n")
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return int(e.code or 0)

    setup_logging(
        log_file=args.log_file or os.getenv("POOLING_LOG_FILE") or None,
        level=level_from_name(args.log_level or os.getenv("POOLING_LOG_LEVEL")),
    )

    try:
        return args.func(args)
    except NumericalError as e:
        logger.debug(f"Numeric failure in {args.command}", exc_info=True)
        sys.stderr.write(f"numeric failure: {e}\n")
        return EXIT_NUMERIC
    except (UsageError, ConfigError, QuantileDomainError, ValueError, OSError,
            InsufficientStorageError, ResultWriteError) as e:
        sys.stderr.write(f"error: {e}\n")
        return EXIT_USAGE

if __name__ == "__main__":
    sys.exit(main())
