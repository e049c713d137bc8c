"""Primal and adjoint solutions of one realization via Duhamel formulas.

The primal system is :math:`\\partial_t^\\alpha x = A x + B u`, ``x(0) = x0``
(Caputo derivative), with solution

.. math::

    x(t) = E_\\alpha(t^\\alpha A) x_0
         + \\int_0^t (t-s)^{\\alpha-1} E_{\\alpha,\\alpha}((t-s)^\\alpha A) B u(s)\\,ds.

The convolution is discretized with a product-midpoint rule on a uniform grid:
the singular weight ``(t_k - s)^(alpha-1)`` is integrated exactly on each
subinterval and the Mittag-Leffler factor is taken at the subinterval midpoint.
On a uniform grid the lag ``t_k - s_{k,j}`` only depends on ``k - j``, so one
trajectory needs ``N`` matrix Mittag-Leffler evaluations and one discrete
convolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from fracavg.errors import NumericalDomainError
from fracavg.ml import MLParams, ml_matrix, ml_matrix_batch


@dataclass(frozen=True)
class FractionalOrder:
    """Derivative order ``alpha`` in (0, 1] and horizon ``T``."""

    alpha: float
    T: float

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise NumericalDomainError(f"alpha must lie in (0, 1]: {self.alpha}")
        if not (self.T > 0 and math.isfinite(self.T)):
            raise NumericalDomainError(f"horizon T must be positive: {self.T}")

    @property
    def one(self) -> MLParams:
        """Parameters of :math:`E_\\alpha = E_{\\alpha,1}`."""
        return MLParams(self.alpha, 1.0)

    @property
    def kernel(self) -> MLParams:
        """Parameters of :math:`E_{\\alpha,\\alpha}`."""
        return MLParams(self.alpha, self.alpha)


class SystemRealization:
    """One pair ``(A, B)`` with ``A`` of shape ``(n, n)`` and ``B`` of shape ``(n, m)``."""

    def __init__(self, A, B) -> None:
        A = np.array(A, dtype=float)
        B = np.array(B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
            raise NumericalDomainError(f"A must be square and non-empty, got {A.shape}")
        if B.ndim != 2 or B.shape[0] != A.shape[0] or B.shape[1] < 1:
            raise NumericalDomainError(
                f"B must have shape ({A.shape[0]}, m>=1), got {B.shape}"
            )
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise NumericalDomainError("system matrices must be finite")
        A.flags.writeable = False
        B.flags.writeable = False
        self.A = A
        self.B = B

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def __repr__(self) -> str:
        return f"SystemRealization(n={self.n}, m={self.m})"


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_j = j T / N``, ``j = 0..N``."""

    T: float
    N: int

    def __post_init__(self) -> None:
        if int(self.N) != self.N or self.N < 1:
            raise NumericalDomainError(f"grid needs N >= 1 subintervals, got {self.N}")
        if not self.T > 0:
            raise NumericalDomainError(f"grid horizon must be positive: {self.T}")

    @property
    def h(self) -> float:
        return self.T / self.N

    @cached_property
    def nodes(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.h

    @cached_property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.N) + 0.5) * self.h


@dataclass(frozen=True, eq=False)
class ControlSignal:
    """Piecewise-constant control: ``values[j]`` acts on ``[t_j, t_{j+1})``."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != self.grid.N:
            raise NumericalDomainError(
                f"control needs {self.grid.N} value vectors, got shape {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise NumericalDomainError("control values must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid: TimeGrid, m: int) -> ControlSignal:
        return cls(grid, np.zeros((grid.N, m)))

    @classmethod
    def constant(cls, grid: TimeGrid, value) -> ControlSignal:
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(grid, np.tile(value, (grid.N, 1)))

    @property
    def m(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States ``x_j`` at every node of *grid*, shape ``(N + 1, n)``."""

    grid: TimeGrid
    states: np.ndarray


def _check_time(order: FractionalOrder, t: float) -> float:
    t = float(t)
    if not 0.0 <= t <= order.T * (1 + 1e-14):
        raise NumericalDomainError(f"time {t} outside [0, {order.T}]")
    return min(t, order.T)


def _check_grid(order: FractionalOrder, grid: TimeGrid) -> None:
    if not math.isclose(grid.T, order.T, rel_tol=1e-14):
        raise NumericalDomainError(f"grid horizon {grid.T} differs from T={order.T}")


def product_weights(alpha: float, h: float, N: int) -> np.ndarray:
    """Exact integrals of ``tau^(alpha-1)`` over ``[i h, (i+1) h]``, ``i = 0..N-1``.

    They telescope: the first ``k`` weights sum to ``(k h)^alpha / alpha``.
    """
    i = np.arange(N + 1, dtype=float)
    edges = (i * h) ** alpha
    return np.diff(edges) / alpha


def homogeneous_state(order: FractionalOrder, sys: SystemRealization, x0, t: float) -> np.ndarray:
    """Free response :math:`E_\\alpha(t^\\alpha A) x_0`."""
    t = _check_time(order, t)
    x0 = np.asarray(x0, dtype=float)
    return ml_matrix(order.one, t**order.alpha * sys.A) @ x0


def homogeneous_trajectory(
    order: FractionalOrder, sys: SystemRealization, x0, grid: TimeGrid
) -> np.ndarray:
    """Free response at every grid node, shape ``(N + 1, n)``."""
    _check_grid(order, grid)
    E = ml_matrix_batch(order.one, sys.A, grid.nodes**order.alpha)
    return E @ np.asarray(x0, dtype=float)


def forcing_kernel(
    order: FractionalOrder, sys: SystemRealization, grid: TimeGrid
) -> np.ndarray:
    """Discrete convolution kernel of the forcing term, shape ``(N, n, m)``.

    ``K[i] = w_i E_{alpha,alpha}(((i + 1/2) h)^alpha A) B`` where ``w_i`` is the
    exact weight of the lag interval ``[i h, (i+1) h]``.
    """
    _check_grid(order, grid)
    w = product_weights(order.alpha, grid.h, grid.N)
    E = ml_matrix_batch(order.kernel, sys.A, grid.midpoints**order.alpha)
    return w[:, None, None] * (E @ sys.B)


def duhamel_state(
    order: FractionalOrder,
    sys: SystemRealization,
    x0,
    u: ControlSignal,
    k: int,
) -> np.ndarray:
    """State at node ``t_k`` under the piecewise-constant control *u*."""
    grid = u.grid
    _check_grid(order, grid)
    if int(k) != k or not 0 <= k <= grid.N:
        raise IndexError(f"node index {k} outside 0..{grid.N}")
    if u.m != sys.m:
        raise NumericalDomainError(f"control has {u.m} inputs, system expects {sys.m}")
    k = int(k)
    x0 = np.asarray(x0, dtype=float)
    if k == 0:
        return x0.copy()
    tk = grid.nodes[k]
    hom = ml_matrix(order.one, tk**order.alpha * sys.A) @ x0

    lags = np.arange(k)  # lag index i = k - 1 - j
    w = product_weights(order.alpha, grid.h, k)
    E = ml_matrix_batch(order.kernel, sys.A, ((lags + 0.5) * grid.h) ** order.alpha)
    Bu = u.values[:k][::-1] @ sys.B.T  # row i holds B u_{k-1-i}
    return hom + np.einsum("i,iab,ib->a", w, E, Bu)


def solve(
    order: FractionalOrder,
    sys: SystemRealization,
    x0,
    u: ControlSignal,
    *,
    kernel: np.ndarray | None = None,
) -> Trajectory:
    """Trajectory at every node of ``u.grid``.

    *kernel* may carry a precomputed :func:`forcing_kernel` for this system.
    """
    grid = u.grid
    _check_grid(order, grid)
    if u.m != sys.m:
        raise NumericalDomainError(f"control has {u.m} inputs, system expects {sys.m}")
    x0 = np.asarray(x0, dtype=float)
    states = homogeneous_trajectory(order, sys, x0, grid)
    states[0] = x0
    if np.any(u.values):
        K = forcing_kernel(order, sys, grid) if kernel is None else kernel
        N = grid.N
        for a in range(sys.n):
            acc = np.zeros(N)
            for c in range(sys.m):
                acc += np.convolve(K[:, a, c], u.values[:, c])[:N]
            states[1:, a] += acc
    return Trajectory(grid, states)


def adjoint_state(order: FractionalOrder, sys: SystemRealization, yT, t: float) -> np.ndarray:
    """Adjoint solution :math:`(T-t)^{\\alpha-1} E_{\\alpha,\\alpha}((T-t)^\\alpha A^T) y_T`.

    Singular at ``t = T`` for ``alpha < 1``; evaluation there is an error.
    """
    t = _check_time(order, t)
    yT = np.asarray(yT, dtype=float)
    lag = order.T - t
    if lag == 0.0:
        if order.alpha < 1.0:
            raise NumericalDomainError("adjoint solution is singular at t = T for alpha < 1")
        return yT.copy()
    E = ml_matrix(order.kernel, lag**order.alpha * sys.A.T)
    return lag ** (order.alpha - 1.0) * (E @ yT)


def adjoint_trajectory(order: FractionalOrder, sys: SystemRealization, yT, times) -> np.ndarray:
    """:func:`adjoint_state` at every time in *times* (all ``< T`` when ``alpha < 1``).

    Returns shape ``(len(times), n)``; the Mittag-Leffler factors share a
    single batched series evaluation.
    """
    times = np.array([_check_time(order, t) for t in np.atleast_1d(times)])
    lags = order.T - times
    if order.alpha < 1.0 and np.any(lags == 0.0):
        raise NumericalDomainError("adjoint solution is singular at t = T for alpha < 1")
    # E_{a,a}(c A^T) = E_{a,a}(c A)^T; reuse the primal series
    E = ml_matrix_batch(order.kernel, sys.A, lags**order.alpha).transpose(0, 2, 1)
    with np.errstate(divide="ignore"):
        factor = np.where(lags > 0, lags ** (order.alpha - 1.0), 1.0)
    return factor[:, None] * (E @ np.asarray(yT, dtype=float))


def adjoint_fractional_integral(
    order: FractionalOrder, sys: SystemRealization, yT, t: float
) -> np.ndarray:
    """Right Riemann-Liouville integral of order ``1 - alpha`` of the adjoint.

    Closed form :math:`E_\\alpha((T-t)^\\alpha A^T) y_T`, valid on all of ``[0, T]``.
    """
    t = _check_time(order, t)
    lag = order.T - t
    return ml_matrix(order.one, lag**order.alpha * sys.A.T) @ np.asarray(yT, dtype=float)


@dataclass(frozen=True)
class DualityTerms:
    control_pairing: float
    terminal_pairing: float
    initial_pairing: float

    @property
    def residual(self) -> float:
        return abs(self.control_pairing - self.terminal_pairing + self.initial_pairing)

    @property
    def scale(self) -> float:
        return max(abs(self.control_pairing), abs(self.terminal_pairing), abs(self.initial_pairing))


def duality_terms(
    order: FractionalOrder, sys: SystemRealization, x0, yT, u: ControlSignal
) -> DualityTerms:
    """The three pairings of the primal/adjoint duality relation, discretized.

    ``control_pairing`` integrates ``<u, B^T y>`` with the product-midpoint rule,
    the weight ``(T - s)^(alpha-1)`` being pulled out of the adjoint and
    integrated exactly per subinterval.
    """
    grid = u.grid
    _check_grid(order, grid)
    x0 = np.asarray(x0, dtype=float)
    yT = np.asarray(yT, dtype=float)
    alpha, T = order.alpha, order.T

    edges = (T - grid.nodes) ** alpha
    w = (edges[:-1] - edges[1:]) / alpha
    lags = T - grid.midpoints
    E = ml_matrix_batch(order.kernel, sys.A.T, lags**alpha)
    Bty = (E @ yT) @ sys.B  # row j: B^T E_{a,a}(lag_j^a A^T) yT
    control_pairing = float(np.sum(w * np.einsum("jc,jc->j", u.values, Bty)))

    xT = duhamel_state(order, sys, x0, u, grid.N)
    terminal_pairing = float(xT @ yT)
    initial_pairing = float(x0 @ adjoint_fractional_integral(order, sys, yT, 0.0))
    return DualityTerms(control_pairing, terminal_pairing, initial_pairing)


def duality_residual(
    order: FractionalOrder, sys: SystemRealization, x0, yT, u: ControlSignal
) -> float:
    """Absolute defect of the discretized duality relation (0 in exact arithmetic)."""
    return duality_terms(order, sys, x0, yT, u).residual
