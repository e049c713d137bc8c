"""Minimal-energy (HUM) open-loop control for the ensemble average.

The control steering :math:`\\mathbb{E}(x(T))` to ``x1`` with least norm in
the weighted space :math:`\\langle u, v\\rangle = \\int_0^T (T-s)^{\\alpha-1} u\\cdot v\\,ds`
is

.. math::

    \\hat u(t) = \\mathbb{E}[B^T E_{\\alpha,\\alpha}((T-t)^\\alpha A^T)]\\,\\hat y_T,
    \\qquad G\\,\\hat y_T = x_1 - \\mathbb{E}[E_\\alpha(T^\\alpha A) x_0],

with the linear system solved by conjugate gradient on Gramian actions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from fracavg.ensemble import ParameterEnsemble, expect_matrix
from fracavg.errors import CGBreakdownError, NumericalDomainError, SingularGramianError
from fracavg.gramian import (
    DEFAULT_NQ,
    GramianOperator,
    GramianReport,
    averaged_kernel,
    gramian_report,
)
from fracavg.linfrac import (
    ControlSignal,
    FractionalOrder,
    TimeGrid,
    adjoint_trajectory,
    duhamel_state,
    homogeneous_state,
)

log = logging.getLogger(__name__)

DEFAULT_CG_TOL = 1e-10
BREAKDOWN_SLACK = 1e-14


@dataclass(frozen=True)
class CGResult:
    y: np.ndarray
    iterations: int
    residual_history: list[float]
    converged: bool
    iterates: list[np.ndarray] = field(default_factory=list, repr=False)


def cg_solve(
    apply: Callable[[np.ndarray], np.ndarray],
    rhs,
    y0=None,
    tol: float = DEFAULT_CG_TOL,
    kmax: int | None = None,
) -> CGResult:
    """Conjugate gradient for ``G y = rhs`` with ``G`` given by its action *apply*.

    Stops as soon as ``||r_k|| <= tol`` (absolute) or after *kmax* updates
    (default ``10 n``). Raises :class:`CGBreakdownError` when the curvature
    ``p^T G p`` is not above the dot-product roundoff level
    ``1e-14 ||p|| ||G p||``; for unit-scale ``G`` this is ``1e-14 ||p||^2``.
    """
    rhs = np.asarray(rhs, dtype=float)
    n = rhs.size
    kmax = 10 * n if kmax is None else int(kmax)
    y = np.zeros(n) if y0 is None else np.array(y0, dtype=float)

    r = rhs - apply(y)
    p = r.copy()
    rr = float(r @ r)
    history = [float(np.sqrt(rr))]
    iterates = [y.copy()]
    k = 0
    while history[-1] > tol and k < kmax:
        Gp = apply(p)
        pGp = float(p @ Gp)
        if pGp <= BREAKDOWN_SLACK * float(np.linalg.norm(p) * np.linalg.norm(Gp)):
            raise CGBreakdownError(
                f"non-positive curvature p^T G p = {pGp:.3e} at iteration {k}; "
                "the Gramian action is singular or indefinite"
            )
        a = rr / pGp
        y = y + a * p
        r = r - a * Gp
        rr_next = float(r @ r)
        history.append(float(np.sqrt(rr_next)))
        iterates.append(y.copy())
        k += 1
        if history[-1] <= tol:
            break
        p = r + (rr_next / rr) * p
        rr = rr_next
    return CGResult(y, k, history, history[-1] <= tol, iterates)


@dataclass(frozen=True, eq=False)
class ControlProblem:
    """Averaged steering problem ``E(x(T)) = x1``.

    ``quadrature_Nq=None`` uses the control grid itself as the Gramian
    quadrature, which makes the Gramian exactly the reach map of the solver.
    """

    order: FractionalOrder
    ensemble: ParameterEnsemble
    x1: np.ndarray
    grid: TimeGrid
    quadrature_Nq: int | None = DEFAULT_NQ
    cg_tol: float = DEFAULT_CG_TOL
    cg_max_iter: int | None = None
    gramian_tol: float | None = None

    def __post_init__(self) -> None:
        x1 = np.array(self.x1, dtype=float)
        if x1.shape != (self.ensemble.n,) or not np.all(np.isfinite(x1)):
            raise NumericalDomainError(f"target must be a finite vector of length {self.ensemble.n}")
        object.__setattr__(self, "x1", x1)
        if not self.cg_tol > 0:
            raise NumericalDomainError(f"cg_tol must be positive: {self.cg_tol}")
        if self.cg_max_iter is not None and self.cg_max_iter < 1:
            raise NumericalDomainError(f"cg_max_iter must be >= 1: {self.cg_max_iter}")

    @property
    def Nq(self) -> int:
        return self.grid.N if self.quadrature_Nq is None else int(self.quadrature_Nq)

    @property
    def max_iter(self) -> int:
        return 10 * self.ensemble.n if self.cg_max_iter is None else int(self.cg_max_iter)


@dataclass(frozen=True, eq=False)
class ControlResult:
    u_hat: ControlSignal
    y_hat_T: np.ndarray
    iterations: int
    residual_history: list[float]
    converged: bool
    achieved_average: np.ndarray
    terminal_error: float
    energy: float
    gramian: GramianReport
    rhs: np.ndarray
    ill_conditioned: bool = False

    def summary(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "residual_history": list(self.residual_history),
            "final_residual": self.residual_history[-1],
            "y_hat_T": self.y_hat_T.tolist(),
            "rhs": self.rhs.tolist(),
            "achieved_average": self.achieved_average.tolist(),
            "terminal_error": self.terminal_error,
            "energy": self.energy,
            "ill_conditioned": self.ill_conditioned,
        }


def free_average(order: FractionalOrder, e: ParameterEnsemble) -> np.ndarray:
    """Closed-form :math:`\\mathbb{E}[E_\\alpha(T^\\alpha A) x_0]`."""
    return expect_matrix(e, lambda mem: homogeneous_state(order, mem.system, mem.x0, order.T))


def averaged_state(
    order: FractionalOrder, e: ParameterEnsemble, u: ControlSignal, k: int
) -> np.ndarray:
    return expect_matrix(e, lambda mem: duhamel_state(order, mem.system, mem.x0, u, k))


def control_from_adjoint(
    order: FractionalOrder, e: ParameterEnsemble, grid: TimeGrid, yT
) -> ControlSignal:
    """Control samples ``E[B^T E_{a,a}((T - t)^a A^T)] yT`` at the grid midpoints."""
    phi = averaged_kernel(order, e, order.T - grid.midpoints)
    return ControlSignal(grid, np.einsum("jam,a->jm", phi, np.asarray(yT, dtype=float)))


def variational_control(
    order: FractionalOrder, e: ParameterEnsemble, grid: TimeGrid, yT
) -> ControlSignal:
    """The same control written through the adjoint solution.

    ``(T - t)^(1 - alpha) E[B^T y(t; yT)]`` at the grid midpoints.
    """
    t = grid.midpoints
    Bty = expect_matrix(e, lambda mem: adjoint_trajectory(order, mem.system, yT, t) @ mem.system.B)
    return ControlSignal(grid, ((order.T - t) ** (1.0 - order.alpha))[:, None] * Bty)


def weighted_energy(order: FractionalOrder, u: ControlSignal) -> float:
    """Norm of *u* in the weighted space with weight ``(T - s)^(alpha - 1)``."""
    return float(np.sqrt(weighted_inner(order, u, u)))


def energy_weights(order: FractionalOrder, grid: TimeGrid) -> np.ndarray:
    edges = (order.T - grid.nodes) ** order.alpha
    return (edges[:-1] - edges[1:]) / order.alpha


def weighted_inner(order: FractionalOrder, u: ControlSignal, v: ControlSignal) -> float:
    w = energy_weights(order, u.grid)
    return float(np.sum(w * np.einsum("jc,jc->j", u.values, v.values)))


def hum_control(p: ControlProblem) -> ControlResult:
    """Gramian-based minimal-energy control, verified by re-simulation."""
    order, e = p.order, p.ensemble
    op = GramianOperator(order, e, p.Nq)
    report = gramian_report(op, p.gramian_tol)
    if not report.invertible:
        raise SingularGramianError(
            f"averaged Gramian is singular: lambda_min = {report.lambda_min:.3e} "
            f"<= tolerance {report.tolerance:.3e}"
        )
    if report.ill_conditioned:
        log.warning("averaged Gramian is ill-conditioned (cond = %.3e)", report.condition_number)

    rhs = p.x1 - free_average(order, e)
    cg = cg_solve(op.apply, rhs, None, p.cg_tol, p.max_iter)
    if not cg.converged:
        log.warning(
            "CG stopped after %d iterations with residual %.3e > %.1e",
            cg.iterations, cg.residual_history[-1], p.cg_tol,
        )

    u_hat = control_from_adjoint(order, e, p.grid, cg.y)
    achieved = averaged_state(order, e, u_hat, p.grid.N)
    return ControlResult(
        u_hat=u_hat,
        y_hat_T=cg.y,
        iterations=cg.iterations,
        residual_history=cg.residual_history,
        converged=cg.converged,
        achieved_average=achieved,
        terminal_error=float(np.linalg.norm(achieved - p.x1)),
        energy=weighted_energy(order, u_hat),
        gramian=report,
        rhs=rhs,
        ill_conditioned=report.ill_conditioned,
    )


# -- minimality diagnostic ---------------------------------------------------


def reach_map(order: FractionalOrder, e: ParameterEnsemble, grid: TimeGrid) -> np.ndarray:
    """Per-subinterval input maps of the averaged terminal state, shape ``(N, n, m)``.

    The averaged terminal contribution of a control ``v`` is
    ``sum_j w_j Phi_j v_j`` with ``w`` the energy weights.
    """
    return averaged_kernel(order, e, order.T - grid.midpoints)


@dataclass(frozen=True)
class MinimalityTrial:
    reach_residual: float
    orthogonality: float
    energy_hat: float
    energy_perturbed: float
    energy_w: float
    pythagoras_defect: float
    passed: bool


@dataclass(frozen=True)
class MinimalityReport:
    trials: list[MinimalityTrial]

    @property
    def passed(self) -> bool:
        return all(t.passed for t in self.trials)


def minimality_check(
    p: ControlProblem,
    result: ControlResult,
    trials: int = 20,
    *,
    seed: int = 0,
    rtol: float = 1e-8,
) -> MinimalityReport:
    """Compare the HUM energy with random controls of equal averaged reach.

    Each random ``v`` is projected (in the weighted inner product) onto the
    kernel of the discrete reach map; the projected ``w`` must be orthogonal to
    ``u_hat`` and ``E(u_hat + w)^2`` must equal ``E(u_hat)^2 + E(w)^2``.
    """
    order, grid = p.order, p.grid
    phi = reach_map(order, p.ensemble, grid)
    w = energy_weights(order, grid)
    Gd = np.einsum("j,jam,jbm->ab", w, phi, phi)
    rng = np.random.Generator(np.random.PCG64(seed))
    u_hat = result.u_hat
    e_hat = weighted_energy(order, u_hat)

    out = []
    for _ in range(trials):
        v = rng.standard_normal((grid.N, p.ensemble.m))
        # two projection sweeps keep roundoff from an ill-conditioned Gd in check
        for _sweep in range(2):
            reach = np.einsum("j,jam,jm->a", w, phi, v)
            v = v - np.einsum("jam,a->jm", phi, np.linalg.solve(Gd, reach))
        wsig = ControlSignal(grid, v)
        reach_res = float(np.linalg.norm(np.einsum("j,jam,jm->a", w, phi, v)))
        e_w = weighted_energy(order, wsig)
        inner = weighted_inner(order, wsig, u_hat)
        orth = abs(inner) / max(e_w * e_hat, np.finfo(float).tiny)
        e_sum = weighted_energy(order, ControlSignal(grid, u_hat.values + v))
        pyth = abs(e_sum**2 - (e_hat**2 + e_w**2)) / max(e_sum**2, np.finfo(float).tiny)
        ok = (
            reach_res <= 1e-9
            and orth <= rtol
            and pyth <= rtol
            and e_sum >= e_hat - 1e-9
        )
        out.append(MinimalityTrial(reach_res, orth, e_hat, e_sum, e_w, pyth, ok))
    return MinimalityReport(out)
