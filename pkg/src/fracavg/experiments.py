"""Fractional Rössler study: linearization at the origin with a random damping ``a``.

.. math::

    A(\\sigma) = \\begin{pmatrix} 0 & -1 & -1 \\\\ 1 & a(\\sigma) & 0 \\\\ b & 0 & -c \\end{pmatrix},
    \\qquad B = (0, 0, 1)^T.

Its averaged Kalman matrix has determinant 1 whatever the law of ``a``.
"""

from __future__ import annotations

import dataclasses
import datetime as _dt
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fracavg import __version__
from fracavg.control import ControlProblem, hum_control
from fracavg.ensemble import (
    DistributionSpec,
    Entry,
    Gaussian,
    ParameterEnsemble,
    PointMasses,
    ScalarLaw,
    Uniform,
    averaged_trajectory,
    member_trajectories,
    sample_ensemble,
)
from fracavg.errors import NumericalDomainError
from fracavg.kalman import averaged_kalman
from fracavg.linfrac import ControlSignal, FractionalOrder, TimeGrid, solve
from fracavg.report import AtomicOutput, control_csv, dumps, params_csv, trajectories_csv

B_ROSSLER = np.array([[0.0], [0.0], [1.0]])


def rossler_matrix(a: float, b: float = 0.4, c: float = 4.5) -> np.ndarray:
    return np.array([[0.0, -1.0, -1.0], [1.0, a, 0.0], [b, 0.0, -c]])


@dataclass(frozen=True)
class RosslerConfig:
    """Configuration of the Rössler demo.

    With ``variance_is_std`` a Gaussian law's ``variance`` field is read as a
    standard deviation instead.
    """

    alpha: float = 0.97
    a_law: ScalarLaw = Gaussian(0.34, 0.2)
    variance_is_std: bool = False
    b: float = 0.4
    c: float = 4.5
    T: float = 2.0
    x0: tuple[float, float, float] = (1.0, 1.0, 1.0)
    M: int = 200
    N: int = 2000
    Nq: int = 400
    seed: int = 1
    target: tuple[float, float, float] = (0.0, 0.0, 0.0)
    cg_tol: float = 1e-10
    cg_max_iter: int | None = None

    def __post_init__(self) -> None:
        if not self.c > 0:
            raise NumericalDomainError(f"c must be positive: {self.c}")
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        object.__setattr__(self, "target", tuple(float(v) for v in self.target))

    @property
    def law(self) -> ScalarLaw:
        if self.variance_is_std and isinstance(self.a_law, Gaussian):
            return Gaussian(self.a_law.mean, self.a_law.variance**2)
        return self.a_law

    @property
    def order(self) -> FractionalOrder:
        return FractionalOrder(self.alpha, self.T)

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.T, self.N)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        law = self.a_law
        if isinstance(law, Gaussian):
            d["a_law"] = {"kind": "gaussian", "mean": law.mean, "variance": law.variance}
        elif isinstance(law, Uniform):
            d["a_law"] = {"kind": "uniform", "lo": law.lo, "hi": law.hi}
        else:
            d["a_law"] = {"kind": "point-masses", "values": list(law.values), "probs": list(law.probs)}
        d["x0"] = list(self.x0)
        d["target"] = list(self.target)
        return d


def rossler_spec(cfg: RosslerConfig) -> DistributionSpec:
    return DistributionSpec(
        rossler_matrix(0.0, cfg.b, cfg.c), B_ROSSLER, cfg.law, (Entry("A", 1, 1),), "set"
    )


def build_rossler(cfg: RosslerConfig) -> ParameterEnsemble:
    """Seeded ensemble of linearized Rössler realizations."""
    return sample_ensemble(rossler_spec(cfg), cfg.M, cfg.seed, np.array(cfg.x0))


def point_mass(a: float = 0.34) -> PointMasses:
    return PointMasses((a,), (1.0,))


def uncontrolled_outputs(cfg: RosslerConfig, ens: ParameterEnsemble):
    """Texts of ``param_samples.csv`` and ``uncontrolled.csv`` plus the average."""
    grid = cfg.grid
    zero = ControlSignal.zeros(grid, 1)
    trajs = member_trajectories(cfg.order, ens, zero)
    avg = averaged_trajectory(cfg.order, ens, zero, trajs)
    csv = trajectories_csv(grid.nodes, [t.states for t in trajs], avg.states)
    return params_csv(ens.params), csv, avg


def run_demo(cfg: RosslerConfig, outdir) -> dict:
    """Run the uncontrolled and controlled ensembles and write the figure data.

    Files: ``param_samples.csv``, ``uncontrolled.csv``, ``control.csv``,
    ``controlled.csv`` and ``report.json``. Returns the report dictionary.
    """
    order, grid = cfg.order, cfg.grid
    ens = build_rossler(cfg)
    kalman = averaged_kalman(ens)

    params_text, uncontrolled_text, free_avg = uncontrolled_outputs(cfg, ens)

    problem = ControlProblem(
        order, ens, np.array(cfg.target), grid, cfg.Nq, cfg.cg_tol, cfg.cg_max_iter
    )
    result = hum_control(problem)
    u_hat = result.u_hat
    trajs = [solve(order, mem.system, mem.x0, u_hat) for mem in ens.members]
    ctrl_avg = averaged_trajectory(order, ens, u_hat, trajs)

    report = {
        "tool_version": __version__,
        "created_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "config_echo": cfg.to_dict(),
        "kalman": kalman.to_dict(),
        "gramian": result.gramian.to_dict(),
        "control": result.summary(),
        "uncontrolled_terminal_average": free_avg.states[-1].tolist(),
        "controlled_terminal_average": ctrl_avg.states[-1].tolist(),
    }
    with AtomicOutput(Path(outdir)) as out:
        out.write_text("param_samples.csv", params_text)
        out.write_text("uncontrolled.csv", uncontrolled_text)
        out.write_text("control.csv", control_csv(grid.midpoints, u_hat.values))
        out.write_text(
            "controlled.csv",
            trajectories_csv(grid.nodes, [t.states for t in trajs], ctrl_avg.states),
        )
        out.write_text("report.json", dumps(report))
    return report
