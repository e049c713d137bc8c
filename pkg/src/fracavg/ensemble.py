"""Finite weighted ensembles standing in for the parameter probability space.

An ensemble is either an exact discrete law (the full support with its
probabilities) or a seeded Monte Carlo sample with uniform weights.

Random numbers come from NumPy's ``PCG64`` bit generator seeded with the user
seed; uniforms are ``Generator.random()`` doubles and Gaussians are produced
from them by the Marsaglia polar method, one pair per accepted point, consumed
in order. This fixes the stream bit for bit for a given NumPy build.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Literal, Sequence

import numpy as np

from fracavg.errors import EnsembleError
from fracavg.linfrac import (
    ControlSignal,
    FractionalOrder,
    SystemRealization,
    Trajectory,
    solve,
)

WEIGHT_ATOL = 1e-12


@dataclass(frozen=True, eq=False)
class Member:
    system: SystemRealization
    weight: float
    x0: np.ndarray


@dataclass(frozen=True, eq=False)
class ParameterEnsemble:
    """Weighted list of realizations with per-member initial states.

    ``params`` holds the sampled scalar parameter of each member when the
    ensemble was drawn from a :class:`DistributionSpec`.
    """

    members: tuple[Member, ...]
    kind: Literal["discrete-exact", "monte-carlo"] = "discrete-exact"
    seed: int | None = None
    params: np.ndarray | None = None

    def __post_init__(self) -> None:
        members = tuple(self.members)
        object.__setattr__(self, "members", members)
        if not members:
            raise EnsembleError("an ensemble needs at least one member")
        n, m = members[0].system.n, members[0].system.m
        for k, mem in enumerate(members):
            if (mem.system.n, mem.system.m) != (n, m):
                raise EnsembleError(
                    f"member {k} has shape (n={mem.system.n}, m={mem.system.m}), "
                    f"expected (n={n}, m={m})"
                )
            if mem.x0.shape != (n,):
                raise EnsembleError(f"member {k} initial state has shape {mem.x0.shape}")
            if not mem.weight >= 0:
                raise EnsembleError(f"member {k} has negative weight {mem.weight}")
        total = math.fsum(mem.weight for mem in members)
        if abs(total - 1.0) > WEIGHT_ATOL:
            raise EnsembleError(f"weights sum to {total!r}, not 1")
        if self.kind not in ("discrete-exact", "monte-carlo"):
            raise EnsembleError(f"unknown ensemble kind {self.kind!r}")

    @property
    def M(self) -> int:
        return len(self.members)

    @property
    def n(self) -> int:
        return self.members[0].system.n

    @property
    def m(self) -> int:
        return self.members[0].system.m

    @property
    def weights(self) -> np.ndarray:
        return np.array([mem.weight for mem in self.members])

    @classmethod
    def discrete(
        cls,
        systems: Sequence[SystemRealization],
        weights: Sequence[float] | None = None,
        x0=None,
    ) -> ParameterEnsemble:
        """Exact discrete law over *systems*; equal weights unless given.

        *x0* is a single state shared by all members or one state per member.
        """
        systems = list(systems)
        p = len(systems)
        if weights is None:
            weights = [1.0 / p] * p
        if len(weights) != p:
            raise EnsembleError(f"{len(weights)} weights for {p} members")
        x0s = _broadcast_x0(x0, p, systems[0].n if systems else 0)
        members = tuple(Member(s, float(w), x) for s, w, x in zip(systems, weights, x0s))
        return cls(members, "discrete-exact")

    @classmethod
    def deterministic(cls, A, B, x0=None) -> ParameterEnsemble:
        return cls.discrete([SystemRealization(A, B)], [1.0], x0)


def _broadcast_x0(x0, p: int, n: int) -> list[np.ndarray]:
    if x0 is None:
        return [np.zeros(n) for _ in range(p)]
    arr = np.array(x0, dtype=float)
    if arr.ndim == 1:
        if arr.shape != (n,):
            raise EnsembleError(f"initial state has length {arr.shape[0]}, expected {n}")
        return [arr.copy() for _ in range(p)]
    if arr.shape != (p, n):
        raise EnsembleError(f"per-member initial states have shape {arr.shape}, expected {(p, n)}")
    return [row.copy() for row in arr]


# -- distributions ---------------------------------------------------------


@dataclass(frozen=True)
class Gaussian:
    mean: float
    variance: float

    def __post_init__(self) -> None:
        if not self.variance >= 0:
            raise EnsembleError(f"variance must be non-negative: {self.variance}")


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not self.lo <= self.hi:
            raise EnsembleError(f"uniform law needs lo <= hi, got [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class PointMasses:
    values: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "probs", tuple(float(q) for q in self.probs))
        if not self.values:
            raise EnsembleError("point-mass law has empty support")
        if len(self.values) != len(self.probs):
            raise EnsembleError("point-mass values and probs differ in length")
        if any(q < 0 for q in self.probs) or abs(math.fsum(self.probs) - 1.0) > WEIGHT_ATOL:
            raise EnsembleError(f"point-mass probabilities must be >= 0 and sum to 1: {self.probs}")


ScalarLaw = Gaussian | Uniform | PointMasses


@dataclass(frozen=True)
class Entry:
    """Designated matrix entry ``matrix[row][col]`` with ``matrix`` in {"A", "B"}."""

    matrix: Literal["A", "B"]
    row: int
    col: int


@dataclass(frozen=True, eq=False)
class DistributionSpec:
    """Random pair ``(A(sigma), B(sigma))`` from base matrices and one scalar law.

    Each draw ``r`` of *law* is written into every designated entry
    (``mode="set"``) or multiplies it (``mode="scale"``).
    """

    A0: np.ndarray
    B0: np.ndarray
    law: ScalarLaw
    entries: tuple[Entry, ...]
    mode: Literal["set", "scale"] = "set"

    def __post_init__(self) -> None:
        base = SystemRealization(self.A0, self.B0)
        object.__setattr__(self, "A0", np.array(base.A))
        object.__setattr__(self, "B0", np.array(base.B))
        object.__setattr__(self, "entries", tuple(self.entries))
        if self.mode not in ("set", "scale"):
            raise EnsembleError(f"unknown perturbation mode {self.mode!r}")
        for e in self.entries:
            shape = self.A0.shape if e.matrix == "A" else self.B0.shape
            if e.matrix not in ("A", "B") or not (0 <= e.row < shape[0] and 0 <= e.col < shape[1]):
                raise EnsembleError(f"designated entry {e} outside matrix bounds {shape}")

    def realize(self, r: float) -> SystemRealization:
        A = self.A0.copy()
        B = self.B0.copy()
        for e in self.entries:
            target = A if e.matrix == "A" else B
            if self.mode == "set":
                target[e.row, e.col] = r
            else:
                target[e.row, e.col] *= r
        return SystemRealization(A, B)


def polar_gaussians(rng: np.random.Generator, count: int) -> np.ndarray:
    """Standard normal deviates by the Marsaglia polar method."""
    out = np.empty(count)
    i = 0
    while i < count:
        u = 2.0 * rng.random() - 1.0
        v = 2.0 * rng.random() - 1.0
        s = u * u + v * v
        if s == 0.0 or s >= 1.0:
            continue
        f = math.sqrt(-2.0 * math.log(s) / s)
        out[i] = u * f
        if i + 1 < count:
            out[i + 1] = v * f
        i += 2
    return out


def draw_scalars(law: ScalarLaw, M: int, seed: int) -> np.ndarray:
    """*M* seeded draws of *law*."""
    if M < 1:
        raise EnsembleError(f"sample size must be >= 1, got {M}")
    rng = np.random.Generator(np.random.PCG64(seed))
    if isinstance(law, Gaussian):
        return law.mean + math.sqrt(law.variance) * polar_gaussians(rng, M)
    if isinstance(law, Uniform):
        return np.array([law.lo + (law.hi - law.lo) * rng.random() for _ in range(M)])
    if isinstance(law, PointMasses):
        cdf = np.cumsum(law.probs)
        idx = [min(int(np.searchsorted(cdf, rng.random(), side="right")), len(cdf) - 1) for _ in range(M)]
        return np.array([law.values[i] for i in idx])
    raise EnsembleError(f"unsupported law {law!r}")


def sample_ensemble(spec: DistributionSpec, M: int, seed: int, x0) -> ParameterEnsemble:
    """Monte Carlo ensemble of *M* seeded realizations with weights ``1/M``."""
    r = draw_scalars(spec.law, M, seed)
    systems = [spec.realize(v) for v in r]
    x0s = _broadcast_x0(x0, M, spec.A0.shape[0])
    members = tuple(Member(s, 1.0 / M, x) for s, x in zip(systems, x0s))
    return ParameterEnsemble(members, "monte-carlo", seed=int(seed), params=r)


def _weighted_sum(pairs) -> np.ndarray:
    """Index-ordered sum of ``w * value``; entries equal across members stay exact.

    The weights sum to one, so for such entries rounding is the only thing that
    could move the result.
    """
    acc = first = same = None
    for k, (w, val) in enumerate(pairs):
        val = np.asarray(val, dtype=float)
        if acc is None:
            first = val
            same = np.ones(val.shape, dtype=bool)
            acc = w * val
        elif val.shape != first.shape:
            raise EnsembleError(f"member {k} gives shape {val.shape}, expected {first.shape}")
        else:
            acc = acc + w * val
            same &= val == first
    return np.where(same, first, acc)


def expect_matrix(e: ParameterEnsemble, f: Callable[[Member], np.ndarray]) -> np.ndarray:
    """Weighted sum of ``f(member)``, reduced in member order."""
    return _weighted_sum((mem.weight, f(mem)) for mem in e.members)


def member_trajectories(
    order: FractionalOrder, e: ParameterEnsemble, u: ControlSignal
) -> list[Trajectory]:
    return [solve(order, mem.system, mem.x0, u) for mem in e.members]


def averaged_trajectory(
    order: FractionalOrder,
    e: ParameterEnsemble,
    u: ControlSignal,
    trajectories: Sequence[Trajectory] | None = None,
) -> Trajectory:
    """Weighted average of the member trajectories at every node."""
    if trajectories is None:
        trajectories = member_trajectories(order, e, u)
    acc = _weighted_sum((mem.weight, traj.states) for mem, traj in zip(e.members, trajectories))
    return Trajectory(u.grid, acc)
