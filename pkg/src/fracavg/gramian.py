"""Averaged controllability Gramian.

.. math::

    G = \\int_0^T \\tau^{\\alpha-1}\\,
        \\mathbb{E}[E_{\\alpha,\\alpha}(\\tau^\\alpha A) B]\\,
        \\mathbb{E}[B^T E_{\\alpha,\\alpha}(\\tau^\\alpha A^T)]\\,d\\tau

Note the expectations are taken on each factor separately, which is not the
same as :math:`\\mathbb{E}[E B B^T E^T]` unless the ensemble is deterministic.
The integral is discretized with the product-midpoint rule in ``tau = T - s``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from fracavg.ensemble import ParameterEnsemble
from fracavg.errors import NumericalDomainError
from fracavg.linfrac import FractionalOrder, product_weights
from fracavg.ml import ml_matrix_batch

DEFAULT_NQ = 400
ILL_CONDITIONED = 1e12


def averaged_kernel(order: FractionalOrder, e: ParameterEnsemble, taus) -> np.ndarray:
    """:math:`\\mathbb{E}[E_{\\alpha,\\alpha}(\\tau^\\alpha A) B]` for each lag, shape ``(len(taus), n, m)``."""
    taus = np.asarray(taus, dtype=float)
    scales = taus**order.alpha
    acc = np.zeros((taus.size, e.n, e.m))
    for mem in e.members:
        E = ml_matrix_batch(order.kernel, mem.system.A, scales)
        acc += mem.weight * (E @ mem.system.B)
    return acc


class GramianOperator:
    """Quadrature representation ``G = sum_j v_j Phi_j Phi_j^T`` of the Gramian."""

    def __init__(self, order: FractionalOrder, e: ParameterEnsemble, Nq: int = DEFAULT_NQ) -> None:
        if int(Nq) != Nq or Nq < 1:
            raise NumericalDomainError(f"quadrature needs Nq >= 1 subintervals, got {Nq}")
        self.order = order
        self.ensemble = e
        self.Nq = int(Nq)
        h = order.T / self.Nq
        self.weights = product_weights(order.alpha, h, self.Nq)
        self.taus = (np.arange(self.Nq) + 0.5) * h
        self.phi = averaged_kernel(order, e, self.taus)

    @property
    def n(self) -> int:
        return self.ensemble.n

    def apply(self, y) -> np.ndarray:
        """``G y`` without forming ``G``."""
        y = np.asarray(y, dtype=float)
        coeff = np.einsum("jam,a->jm", self.phi, y)
        return np.einsum("j,jam,jm->a", self.weights, self.phi, coeff)

    def quadratic_form(self, y) -> float:
        """``<G y, y>`` as the weighted sum of ``||Phi_j^T y||^2``."""
        y = np.asarray(y, dtype=float)
        coeff = np.einsum("jam,a->jm", self.phi, y)
        return float(np.sum(self.weights * np.sum(coeff**2, axis=1)))

    @cached_property
    def matrix(self) -> np.ndarray:
        G = np.einsum("j,jam,jbm->ab", self.weights, self.phi, self.phi)
        return 0.5 * (G + G.T)


@dataclass(frozen=True, eq=False)
class GramianReport:
    G: np.ndarray
    eigenvalues: np.ndarray
    tolerance: float
    quadrature_N: int

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])

    @property
    def invertible(self) -> bool:
        return self.lambda_min > self.tolerance

    @property
    def condition_number(self) -> float:
        if self.lambda_min <= 0:
            return math.inf
        return self.lambda_max / self.lambda_min

    @property
    def ill_conditioned(self) -> bool:
        return self.condition_number > ILL_CONDITIONED

    def to_dict(self) -> dict:
        return {
            "G": self.G.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "lambda_min": self.lambda_min,
            "lambda_max": self.lambda_max,
            "invertible": self.invertible,
            "condition_number": self.condition_number,
            "ill_conditioned": self.ill_conditioned,
            "tolerance": self.tolerance,
            "quadrature_N": self.quadrature_N,
        }


def invertibility_tolerance(n: int, lambda_max: float) -> float:
    return n * np.finfo(float).eps * max(lambda_max, 1.0)


def gramian_report(op: GramianOperator, tol: float | None = None) -> GramianReport:
    G = op.matrix
    eig = np.linalg.eigvalsh(G)
    if tol is None:
        tol = invertibility_tolerance(op.n, float(eig[-1]))
    return GramianReport(G=G, eigenvalues=eig, tolerance=float(tol), quadrature_N=op.Nq)


def averaged_gramian(
    order: FractionalOrder,
    e: ParameterEnsemble,
    Nq: int = DEFAULT_NQ,
    *,
    tol: float | None = None,
) -> GramianReport:
    """Assemble the averaged Gramian and its spectrum.

    ``invertible`` compares the smallest eigenvalue against
    ``n * eps * max(lambda_max, 1)`` unless *tol* is given.
    """
    return gramian_report(GramianOperator(order, e, Nq), tol)


def gramian_apply(order: FractionalOrder, e: ParameterEnsemble, Nq: int, y) -> np.ndarray:
    """Matrix-free product ``G y``."""
    return GramianOperator(order, e, Nq).apply(y)
