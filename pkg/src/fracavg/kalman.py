"""Averaged and extended (simultaneous) Kalman rank tests."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from fracavg.ensemble import ParameterEnsemble, expect_matrix
from fracavg.errors import EnsembleError
from fracavg.linfrac import SystemRealization


@dataclass(frozen=True, eq=False)
class KalmanReport:
    K: np.ndarray
    singular_values: np.ndarray
    rank: int
    tolerance: float
    target_rank: int
    kind: Literal["average", "simultaneous"] = "average"

    @property
    def controllable_in_average(self) -> bool:
        return self.rank == self.target_rank

    @property
    def controllable(self) -> bool:
        return self.rank == self.target_rank

    @property
    def determinant(self) -> float | None:
        if self.K.shape[0] != self.K.shape[1]:
            return None
        return float(np.linalg.det(self.K))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "K": self.K.tolist(),
            "singular_values": self.singular_values.tolist(),
            "rank": self.rank,
            "target_rank": self.target_rank,
            "tolerance": self.tolerance,
            "controllable_in_average": self.controllable_in_average,
            "determinant": self.determinant,
        }


def numerical_rank(K: np.ndarray, tol: float | None = None) -> tuple[np.ndarray, int, float]:
    """Singular values, rank and the tolerance used.

    Default tolerance ``max(K.shape) * eps * sigma_max``.
    """
    sv = np.linalg.svd(K, compute_uv=False)
    if tol is None:
        smax = float(sv[0]) if sv.size else 0.0
        tol = max(K.shape) * np.finfo(float).eps * smax
    return sv, int(np.sum(sv > tol)), float(tol)


def kalman_matrix(A: np.ndarray, B: np.ndarray, blocks: int | None = None) -> np.ndarray:
    """Classical ``[B, AB, ..., A^{blocks-1} B]``."""
    blocks = A.shape[0] if blocks is None else blocks
    cols = [B]
    for _ in range(1, blocks):
        cols.append(A @ cols[-1])
    return np.hstack(cols)


def averaged_kalman_matrix(e: ParameterEnsemble, blocks: int | None = None) -> np.ndarray:
    """``[E(B) | E(AB) | ... ]``; each block averages the per-member product."""
    blocks = e.n if blocks is None else blocks
    return expect_matrix(e, lambda mem: kalman_matrix(mem.system.A, mem.system.B, blocks))


def averaged_kalman(
    e: ParameterEnsemble, tol: float | None = None, blocks: int | None = None
) -> KalmanReport:
    """Average controllability verdict: rank of the averaged Kalman matrix vs ``n``.

    *blocks* (default ``n``) sets how many moments ``E(A^k B)`` enter. For a
    genuinely random ensemble the members' Cayley-Hamilton relations differ, so
    higher moments can raise the rank; the averaged Gramian sees all of them.
    """
    K = averaged_kalman_matrix(e, blocks)
    sv, rank, tol = numerical_rank(K, tol)
    return KalmanReport(K, sv, rank, tol, target_rank=e.n, kind="average")


@dataclass(frozen=True, eq=False)
class ExtendedSystem:
    """Block-diagonal ``A`` and stacked ``B`` over the full finite support."""

    bold_A: np.ndarray
    bold_B: np.ndarray
    p: int

    def realization(self) -> SystemRealization:
        return SystemRealization(self.bold_A, self.bold_B)

    def as_ensemble(self, x0=None) -> ParameterEnsemble:
        """Single-member deterministic ensemble wrapping ``(bold_A, bold_B)``.

        *x0* is the stacked initial state, length ``p n``.
        """
        return ParameterEnsemble.discrete([self.realization()], [1.0], x0)


def extended_system(e: ParameterEnsemble) -> ExtendedSystem:
    if e.kind != "discrete-exact":
        raise EnsembleError(
            "the extended system needs the exact finite support; got a Monte Carlo sample"
        )
    n = e.n
    A = np.zeros((e.M * n, e.M * n))
    for i, mem in enumerate(e.members):
        A[i * n : (i + 1) * n, i * n : (i + 1) * n] = mem.system.A
    B = np.vstack([mem.system.B for mem in e.members])
    return ExtendedSystem(A, B, e.M)


def simultaneous_kalman_check(e: ParameterEnsemble, tol: float | None = None) -> KalmanReport:
    """Rank of ``[B, AB, ..., A^{pn-1} B]`` for the extended system, target ``p n``."""
    ext = extended_system(e)
    K = kalman_matrix(ext.bold_A, ext.bold_B)
    sv, rank, tol = numerical_rank(K, tol)
    return KalmanReport(K, sv, rank, tol, target_rank=ext.bold_A.shape[0], kind="simultaneous")
