"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 numerical-domain error,
4 I/O error, 5 singular averaged Gramian, 6 conjugate gradient failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import logging
import sys

import numpy as np

from fracavg import __version__
from fracavg.config import RunConfig, load_config, with_overrides
from fracavg.control import ControlProblem, hum_control
from fracavg.ensemble import Gaussian, averaged_trajectory, member_trajectories
from fracavg.errors import (
    CGBreakdownError,
    ConfigError,
    EnsembleError,
    MLConvergenceError,
    NumericalDomainError,
    SingularGramianError,
)
from fracavg.experiments import RosslerConfig, point_mass, run_demo
from fracavg.gramian import averaged_gramian
from fracavg.kalman import averaged_kalman, simultaneous_kalman_check
from fracavg.linfrac import ControlSignal
from fracavg.report import AtomicOutput, control_csv, dumps, params_csv, trajectories_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DOMAIN = 3
EXIT_IO = 4
EXIT_SINGULAR = 5
EXIT_CG = 6

log = logging.getLogger("fracavg")


class CGFailure(Exception):
    pass


def envelope(cfg: RunConfig, **sections) -> dict:
    out = {
        "tool_version": __version__,
        "created_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "config_echo": cfg.to_dict(),
    }
    out.update(sections)
    return out


def _load(args) -> RunConfig:
    if args.config is None:
        raise ConfigError("--config PATH is required for this command")
    cfg = load_config(args.config)
    return with_overrides(
        cfg,
        seed=args.seed,
        grid=args.grid,
        quadrature=args.quadrature,
        samples=args.samples,
        tol=args.tol,
        output=args.output,
    )


def cmd_simulate(args) -> int:
    cfg = _load(args)
    ens = cfg.ensemble()
    zero = ControlSignal.zeros(cfg.grid, ens.m)
    trajs = member_trajectories(cfg.order, ens, zero)
    avg = averaged_trajectory(cfg.order, ens, zero, trajs)
    with AtomicOutput(cfg.output.dir) as out:
        if "csv" in cfg.output.formats:
            if ens.params is not None:
                out.write_text("param_samples.csv", params_csv(ens.params))
            out.write_text(
                "uncontrolled.csv",
                trajectories_csv(cfg.grid.nodes, [t.states for t in trajs], avg.states),
            )
    return EXIT_OK


def cmd_gramian(args) -> int:
    cfg = _load(args)
    report = averaged_gramian(cfg.order, cfg.ensemble(), cfg.Nq)
    with AtomicOutput(cfg.output.dir) as out:
        out.write_text("report.json", dumps(envelope(cfg, gramian=report.to_dict())))
    return EXIT_OK


def cmd_kalman(args) -> int:
    cfg = _load(args)
    ens = cfg.ensemble()
    sections = {"kalman": averaged_kalman(ens).to_dict()}
    if ens.kind == "discrete-exact":
        sections["simultaneous"] = simultaneous_kalman_check(ens).to_dict()
    with AtomicOutput(cfg.output.dir) as out:
        out.write_text("report.json", dumps(envelope(cfg, **sections)))
    return EXIT_OK


def cmd_control(args) -> int:
    cfg = _load(args)
    if cfg.control is None:
        raise ConfigError("control: section with 'target' is required for this command")
    ens = cfg.ensemble()
    problem = ControlProblem(
        cfg.order,
        ens,
        np.array(cfg.control.target),
        cfg.grid,
        cfg.Nq,
        cfg.control.cg_tol,
        cfg.control.cg_max_iter,
    )
    result = hum_control(problem)
    if not result.converged:
        raise CGFailure(
            f"CG did not reach tol {cfg.control.cg_tol:g} in {result.iterations} iterations "
            f"(residual {result.residual_history[-1]:.3e})"
        )
    rep = envelope(
        cfg,
        kalman=averaged_kalman(ens).to_dict(),
        gramian=result.gramian.to_dict(),
        control=result.summary(),
    )
    with AtomicOutput(cfg.output.dir) as out:
        if "csv" in cfg.output.formats:
            out.write_text("control.csv", control_csv(cfg.grid.midpoints, result.u_hat.values))
        out.write_text("report.json", dumps(rep))
    return EXIT_OK


def cmd_rossler_demo(args) -> int:
    cfg = RosslerConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.samples is not None:
        overrides["M"] = args.samples
    if args.grid is not None:
        overrides["N"] = args.grid
    if args.quadrature is not None:
        overrides["Nq"] = args.quadrature
    if args.tol is not None:
        overrides["cg_tol"] = args.tol
    if args.variance_is_std:
        overrides["variance_is_std"] = True
    if args.point_mass is not None:
        overrides["a_law"] = point_mass(args.point_mass)
    try:
        cfg = dataclasses.replace(cfg, **overrides)
        cfg.grid, cfg.order
    except NumericalDomainError as exc:
        raise ConfigError(str(exc)) from exc
    outdir = args.outdir or args.output or "rossler-out"
    report = run_demo(cfg, outdir)
    if not report["control"]["converged"]:
        raise CGFailure("CG did not converge in the Rössler demo")
    avg = report["controlled_terminal_average"]
    print(
        f"det(K) = {report['kalman']['determinant']:.12g}, rank {report['kalman']['rank']}; "
        f"CG iterations {report['control']['iterations']}; "
        f"E(x(T)) = ({avg[0]:.3e}, {avg[1]:.3e}, {avg[2]:.3e})"
    )
    return EXIT_OK


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="JSON run configuration")
    p.add_argument("--output", metavar="DIR", help="output directory (overrides output.dir)")
    p.add_argument("--seed", type=int, metavar="U64", help="seed of the sampled ensemble")
    p.add_argument("--grid", type=int, metavar="N", help="time grid subintervals")
    p.add_argument("--quadrature", type=int, metavar="NQ", help="Gramian quadrature subintervals")
    p.add_argument("--samples", type=int, metavar="M", help="Monte Carlo sample size")
    p.add_argument("--tol", type=float, metavar="REAL", help="CG residual tolerance")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fracavg",
        description="Averaged controllability of fractional linear systems with random parameters.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func, help_ in [
        ("simulate", cmd_simulate, "per-member and averaged free trajectories"),
        ("gramian", cmd_gramian, "averaged Gramian report"),
        ("kalman", cmd_kalman, "averaged (and extended) Kalman rank report"),
        ("control", cmd_control, "minimal-energy averaged control"),
        ("rossler-demo", cmd_rossler_demo, "fractional Rössler reproduction"),
    ]:
        p = sub.add_parser(name, help=help_)
        _common(p)
        p.set_defaults(func=func)
        if name == "rossler-demo":
            p.add_argument("--outdir", metavar="DIR", help="output directory")
            p.add_argument(
                "--variance-is-std",
                action="store_true",
                help="read the Gaussian spread 0.2 as a standard deviation",
            )
            p.add_argument(
                "--point-mass",
                type=float,
                nargs="?",
                const=Gaussian(0.34, 0.2).mean,
                metavar="A",
                help="replace the Gaussian law of a by a point mass (default 0.34)",
            )
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, EnsembleError) as exc:
        print(f"fracavg: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SingularGramianError as exc:
        print(f"fracavg: {exc}", file=sys.stderr)
        return EXIT_SINGULAR
    except (CGFailure, CGBreakdownError) as exc:
        print(f"fracavg: {exc}", file=sys.stderr)
        return EXIT_CG
    except (NumericalDomainError, MLConvergenceError, OverflowError, IndexError) as exc:
        print(f"fracavg: numerical error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"fracavg: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
