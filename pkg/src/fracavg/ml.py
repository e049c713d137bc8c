"""Gamma and Mittag-Leffler functions for scalars and square matrices.

The two-parameter Mittag-Leffler function is evaluated from its Taylor series

.. math::

    E_{\\alpha,\\beta}(Z) = \\sum_{k \\ge 0} \\frac{Z^k}{\\Gamma(\\alpha k + \\beta)},

truncated adaptively. There is no semigroup law for :math:`\\alpha \\ne 1`, so
scaling and squaring is not available; arguments are therefore restricted to
a norm ball (``bound``, default 50) where the plain series is reliable.

For arguments with large negative spectrum the alternating terms cancel; when
the rounding error estimate ``eps * sum |term_k|`` exceeds ``CANCELLATION_RTOL``
times the result, the evaluation raises instead of returning lost digits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from fracavg.errors import MLConvergenceError, MLDomainError, NumericalDomainError

DEFAULT_BOUND = 50.0
STOP_RTOL = 1e-16
MAX_TERMS = 2000
CANCELLATION_RTOL = 1e-4
_EPS = float(np.finfo(float).eps)

# largest x with a finite double-precision Gamma(x)
GAMMA_XMAX = 171.6


@dataclass(frozen=True)
class MLParams:
    """Parameters ``(alpha, beta)`` of :math:`E_{\\alpha,\\beta}`."""

    alpha: float
    beta: float = 1.0

    def __post_init__(self) -> None:
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise NumericalDomainError(f"alpha must be positive: {self.alpha}")
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise NumericalDomainError(f"beta must be positive: {self.beta}")


def gamma(x: float) -> float:
    """Gamma function on the positive real axis.

    Raises :class:`NumericalDomainError` for ``x <= 0`` and
    :class:`OverflowError` once the result exceeds double precision.
    """
    x = float(x)
    if not x > 0:
        raise NumericalDomainError(f"gamma is only defined here for x > 0, got {x}")
    if x > GAMMA_XMAX:
        raise OverflowError(f"gamma({x}) overflows double precision")
    return math.gamma(x)


def _gamma_ratio(alpha: float, beta: float, k: int) -> float:
    # Gamma(alpha*(k-1) + beta) / Gamma(alpha*k + beta), safe for large k
    return math.exp(math.lgamma(alpha * (k - 1) + beta) - math.lgamma(alpha * k + beta))


def ml_scalar(
    p: MLParams,
    z: float,
    *,
    bound: float = DEFAULT_BOUND,
    max_terms: int = MAX_TERMS,
) -> float:
    """Evaluate :math:`E_{\\alpha,\\beta}(z)` for real ``z`` with ``|z| <= bound``."""
    z = float(z)
    if abs(z) > bound:
        raise MLDomainError(f"|z| = {abs(z):.6g} exceeds the series bound {bound}")

    term = 1.0 / gamma(p.beta)
    total = term
    mass = abs(term)
    for k in range(1, max_terms):
        term = term * z * _gamma_ratio(p.alpha, p.beta, k)
        total += term
        mass += abs(term)
        if abs(term) < STOP_RTOL * (1.0 + abs(total)):
            _check_cancellation(mass, abs(total))
            return total
    raise MLConvergenceError(
        f"Mittag-Leffler series did not converge in {max_terms} terms (z={z})"
    )


def _check_cancellation(mass, size) -> None:
    """Raise when cancellation leaves fewer than ~4 significant digits."""
    mass = np.asarray(mass, dtype=float)
    size = np.asarray(size, dtype=float)
    if np.any(_EPS * mass > CANCELLATION_RTOL * size):
        raise MLConvergenceError(
            "Mittag-Leffler series lost its significant digits to cancellation "
            f"(sum of |terms| {float(np.max(mass)):.3e}); the argument is too negative"
        )


def _series_terms(
    p: MLParams, A: np.ndarray, max_terms: int
) -> tuple[np.ndarray, np.ndarray]:
    """Stack of series terms ``A^k / Gamma(alpha k + beta)`` and their running sum.

    The sum is accumulated term by term, in the same order as :func:`ml_scalar`.
    """
    n = A.shape[0]
    term = np.eye(n) * (1.0 / gamma(p.beta))
    total = term.copy()
    terms = [term]
    for k in range(1, max_terms):
        term = (term @ A) * _gamma_ratio(p.alpha, p.beta, k)
        terms.append(term)
        total += term
        if np.max(np.abs(term)) < STOP_RTOL * (1.0 + np.max(np.abs(total))):
            return np.stack(terms), total
    raise MLConvergenceError(
        f"Mittag-Leffler matrix series did not converge in {max_terms} terms"
    )


def _as_square(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise NumericalDomainError(f"expected a non-empty square matrix, got {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NumericalDomainError("matrix has non-finite entries")
    return A


def ml_matrix_batch(
    p: MLParams,
    A,
    scales,
    *,
    bound: float = DEFAULT_BOUND,
    max_terms: int = MAX_TERMS,
) -> np.ndarray:
    """Evaluate :math:`E_{\\alpha,\\beta}(c_i A)` for every scalar ``c_i`` in *scales*.

    The series terms are built once for the largest argument ``s A`` with
    ``s = max |c_i|`` and reused for the others with the factors ``(c_i / s)^k``,
    so a whole time grid costs one series evaluation.

    Returns
    -------
    array of shape ``(len(scales), n, n)``
    """
    A = _as_square(A)
    c = np.atleast_1d(np.asarray(scales, dtype=float))
    if c.ndim != 1:
        raise NumericalDomainError("scales must be one-dimensional")
    n = A.shape[0]

    s = float(np.max(np.abs(c))) if c.size else 0.0
    if s * np.linalg.norm(A, 2) > bound:
        raise MLDomainError(
            f"||c A||_2 = {s * np.linalg.norm(A, 2):.6g} exceeds the series bound {bound}"
        )
    if s == 0.0:
        return np.broadcast_to(np.eye(n) * (1.0 / gamma(p.beta)), (c.size, n, n)).copy()

    terms, _ = _series_terms(p, s * A, max_terms)
    rho = c / s
    powers = rho[:, None] ** np.arange(terms.shape[0])[None, :]
    out = np.einsum("ik,kab->iab", powers, terms)
    mass = np.abs(powers) @ np.max(np.abs(terms), axis=(1, 2))
    _check_cancellation(mass, np.max(np.abs(out), axis=(1, 2)))
    return out


def ml_matrix(
    p: MLParams,
    A,
    *,
    bound: float = DEFAULT_BOUND,
    max_terms: int = MAX_TERMS,
) -> np.ndarray:
    """Evaluate the matrix function :math:`E_{\\alpha,\\beta}(A)`.

    Truncates when the max-norm of the current term drops below
    ``1e-16 * (1 + max-norm of the partial sum)``; at most ``max_terms`` terms.
    """
    A = _as_square(A)
    if np.linalg.norm(A, 2) > bound:
        raise MLDomainError(
            f"||A||_2 = {np.linalg.norm(A, 2):.6g} exceeds the series bound {bound}"
        )
    terms, out = _series_terms(p, A, max_terms)
    _check_cancellation(np.sum(np.max(np.abs(terms), axis=(1, 2))), np.max(np.abs(out)))
    return out
