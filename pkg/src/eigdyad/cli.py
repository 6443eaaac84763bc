"""Command-line entry point ``eigdyad``.

Exit codes: 0 success, 1 usage or configuration error, 2 estimation error,
3 input/output error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from eigdyad.core import build_residual_matrix
from eigdyad.dgp import DesignSpec, simulate, standard_designs
from eigdyad.errors import ConfigError, ContractViolation, EstimationError, IngestionError, NumericalError
from eigdyad.estimators import estimate, ols_adjusted
from eigdyad.harness import (
    ESTIMATORS,
    INTERVAL_ESTIMATORS,
    RunConfig,
    _write_csv,
    emit_fn_profile,
    fmt,
    load_edge_list,
    run_monte_carlo,
    write_edge_list,
    write_mc_outputs,
)
from eigdyad.inference import infer
from eigdyad.spectral import eigenvalues_sym, export_spectrum

log = logging.getLogger("eigdyad")

EXIT_OK, EXIT_CONFIG, EXIT_ESTIMATION, EXIT_IO = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_CONFIG)


def _seed(text: str) -> int:
    try:
        val = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}")
    if not 0 <= val < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return val


def _level(text: str) -> float:
    try:
        val = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"level must be a number, got {text!r}")
    if not 0.0 < val < 1.0:
        raise argparse.ArgumentTypeError("level must be in (0, 1)")
    return val


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config (mc) or design spec (simulate, spectrum, fnplot)")
    common.add_argument("--seed", type=_seed, help="master seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--estimator", choices=[e for e in ESTIMATORS if e != "oracle_ols"], default="two_step")
    common.add_argument("--level", type=_level, default=0.95, help="confidence level of intervals")
    common.add_argument("-v", "--verbose", action="store_true")

    source = argparse.ArgumentParser(add_help=False)
    source.add_argument("--in", dest="infile", help="edge-list CSV with header i,j,y,x1..xL")
    source.add_argument("--design", help="'standard:<1-4>' when no --config or --in is given")
    source.add_argument("--n", type=int, help="number of nodes for a simulated design")
    source.add_argument("--no-intercept", action="store_true", help="do not add an intercept to an edge list")

    parser = _Parser(prog="eigdyad", description="Eigenvalue-corrected estimation for dyadic regressions.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common, source], help="simulate a design and write its edge list")
    sub.add_parser("estimate", parents=[common, source], help="estimate from an edge list; JSON report + CSV row")
    sub.add_parser("mc", parents=[common], help="Monte Carlo sweep from a config file")
    sp = sub.add_parser("spectrum", parents=[common, source], help="eigenvalues of the residual matrix")
    sp.add_argument("--mu", help="comma-separated coefficients at which to build M(mu)")
    fp = sub.add_parser("fnplot", parents=[common, source], help="profile of f_N and the corrected objective")
    fp.add_argument("--grid", default="-1:3:0.001", help="start:stop:step, inclusive of stop")
    return parser


def _out_dir(args: argparse.Namespace, default: str = ".") -> Path:
    out = Path(args.out or default)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror or exc}") from exc
    return out


def _design_spec(args: argparse.Namespace) -> DesignSpec:
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        spec = DesignSpec.from_dict(raw)
    else:
        label = args.design or "standard:1"
        try:
            k = int(label.split(":", 1)[1]) if label.startswith("standard:") else 0
        except ValueError:
            k = 0
        if not 1 <= k <= 4:
            raise ConfigError(f"--design must be 'standard:<1-4>', got {label!r}")
        spec = standard_designs()[k - 1]
    if args.n is not None:
        spec = spec.with_(n=args.n)
    if args.seed is not None:
        spec = spec.with_(seed=args.seed)
    return spec


def _load(args: argparse.Namespace):
    """Design, outcome and (for simulated data) the true coefficients."""
    if args.infile:
        design, y, _ = load_edge_list(args.infile, intercept=not args.no_intercept)
        return design, y, None
    spec = _design_spec(args)
    design, y, truth = simulate(spec)
    return design, y, truth.mu0


def _parse_vector(text: str, l: int, what: str) -> np.ndarray:
    try:
        vec = np.array([float(t) for t in text.split(",")])
    except ValueError as exc:
        raise ConfigError(f"{what}: expected comma-separated numbers, got {text!r}") from exc
    if vec.size != l:
        raise ConfigError(f"{what}: expected {l} values, got {vec.size}")
    return vec


def cmd_simulate(args: argparse.Namespace) -> int:
    spec = _design_spec(args)
    design, y, truth = simulate(spec)
    out = _out_dir(args)
    path = write_edge_list(design, y, out / "edges.csv")
    info = {"design": spec.to_dict(), "mu0": truth.mu0.tolist(), "coefficients": list(design.names)}
    (out / "truth.json").write_text(json.dumps(info, indent=2) + "\n", encoding="utf-8")
    print(path)
    return EXIT_OK


def cmd_estimate(args: argparse.Namespace) -> int:
    design, y, _ = _load(args)
    rep = estimate(design, y, args.estimator)
    if args.estimator in INTERVAL_ESTIMATORS:
        report = infer(design, y, rep, args.level).to_dict(design.names)
    else:
        report = {"n": design.n, "coefficients": list(design.names), "estimate": rep.mu_hat.tolist()}
    report["estimator"] = args.estimator
    report["iterations"] = rep.iterations
    report["converged"] = rep.converged
    out = _out_dir(args)
    text = json.dumps(report, indent=2)
    try:
        (out / "report.json").write_text(text + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {out / 'report.json'}: {exc.strerror or exc}") from exc
    cols = ["estimate", "debiased", "std_errors", "ci_lower", "ci_upper"]
    rows = []
    for k, name in enumerate(design.names):
        rows.append([args.estimator, name] + [fmt(report[c][k]) if c in report else "nan" for c in cols])
    _write_csv(out / "summary.csv", ["estimator", "coefficient"] + cols, rows)
    print(text)
    return EXIT_OK


def cmd_mc(args: argparse.Namespace) -> int:
    if not args.config:
        raise ConfigError("mc needs --config")
    cfg = RunConfig.from_json(args.config)
    if args.seed is not None:
        cfg = RunConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    result = run_monte_carlo(cfg)
    paths = write_mc_outputs(result, args.out or cfg.output_dir)
    failures = sum(c.failures for c in result.cells)
    print(f"wrote {len(paths)} files to {args.out or cfg.output_dir} ({failures} failed replication-estimator runs)")
    return EXIT_OK


def cmd_spectrum(args: argparse.Namespace) -> int:
    design, y, mu0 = _load(args)
    if args.mu:
        mu = _parse_vector(args.mu, design.l, "--mu")
    elif mu0 is not None:
        mu = mu0
    else:
        mu = ols_adjusted(design, y).mu_hat
    eig = eigenvalues_sym(build_residual_matrix(design, y, mu).m)
    out = _out_dir(args)
    export_spectrum(eig, out / "spectrum.csv")
    lead = eig[int(np.argmax(np.abs(eig)))]
    print(json.dumps({"n": design.n, "mu": mu.tolist(), "leading": lead, "leading_over_sqrt_n": lead / np.sqrt(design.n)}))
    return EXIT_OK


def cmd_fnplot(args: argparse.Namespace) -> int:
    design, y, _ = _load(args)
    parts = args.grid.split(":")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"--grid must be start:stop:step, got {args.grid!r}") from exc
    if not step > 0 or stop < start:
        raise ConfigError("--grid needs step > 0 and stop >= start")
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    grid = start + step * np.arange(count)
    path = emit_fn_profile(design, y, grid, _out_dir(args) / "fn_profile.csv")
    print(path)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "mc": cmd_mc,
    "spectrum": cmd_spectrum,
    "fnplot": cmd_fnplot,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ContractViolation) as exc:
        print(f"eigdyad: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EstimationError, NumericalError, np.linalg.LinAlgError) as exc:
        print(f"eigdyad: estimation error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except (IngestionError, OSError) as exc:
        print(f"eigdyad: input/output error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
