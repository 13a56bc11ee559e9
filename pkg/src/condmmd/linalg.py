"""Dense symmetric linear algebra used by the estimators."""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np
from scipy import linalg as sla

from ._validation import check_positive, check_square_symmetric
from .exceptions import InputError, NotPSDError

__all__ = ["Spectrum", "ridge_weights", "sym_eig", "matrix_power", "trace_product", "PSD_TOL"]

# eigenvalues in [-PSD_TOL, 0) are treated as round-off and clamped to zero
PSD_TOL = 1e-8


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues (descending) and matching orthonormal eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self):
        V = self.eigenvectors
        return (V * self.eigenvalues) @ V.T


def ridge_weights(K, lam, n=None):
    """Return ``W = (K + lam * n * I)^{-1}``.

    Solved through a Cholesky factorisation; ``W`` is materialised because the
    closed-form estimators use it in several trace terms.
    """
    K = check_square_symmetric(K, "K")
    lam = check_positive(lam, "lambda")
    size = K.shape[0]
    n = size if n is None else int(n)
    A = K + lam * n * np.eye(size)
    try:
        factor = sla.cho_factor(A, lower=True, check_finite=False)
        W = sla.cho_solve(factor, np.eye(size), check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPSDError(f"K + lambda*n*I is not positive definite: {exc}") from exc
    return 0.5 * (W + W.T)


def sym_eig(M):
    M = check_square_symmetric(M, "M")
    vals, vecs = np.linalg.eigh(0.5 * (M + M.T))
    order = np.argsort(vals)[::-1]
    return Spectrum(vals[order], vecs[:, order])


def matrix_power(K, s, spectrum=None):
    """Fractional power ``K^s`` of a symmetric PSD matrix via its spectrum.

    Eigenvalues in ``[-1e-8, 0)`` are clamped to zero; anything more negative
    raises :class:`NotPSDError`. Zero eigenvalues map to 0 for ``s > 0`` and
    to 1 for ``s = 0`` (so ``K^0 = I``).
    """
    s = float(s)
    if not np.isfinite(s) or s < 0:
        raise InputError(f"power must be a real >= 0, got {s!r}")
    spec = sym_eig(K) if spectrum is None else spectrum
    lam = spec.eigenvalues
    if lam.size and lam.min() < -PSD_TOL:
        raise NotPSDError(f"matrix has eigenvalue {lam.min():.3e} < -{PSD_TOL:g}")
    lam = np.clip(lam, 0.0, None)
    if s == 0.0:
        powered = np.ones_like(lam)
    else:
        powered = lam ** s
    V = spec.eigenvectors
    P = (V * powered) @ V.T
    return 0.5 * (P + P.T)


def trace_product(factors):
    """Trace of the ordered product ``factors[0] @ factors[1] @ ...``.

    The last pairing uses ``Tr(AB) = sum(A * B.T)`` so the final square
    product is never formed.
    """
    mats = [np.atleast_2d(np.asarray(f, dtype=float)) for f in factors]
    if not mats:
        raise InputError("trace_product needs at least one factor")
    for a, b in zip(mats, mats[1:]):
        if a.shape[1] != b.shape[0]:
            raise InputError(f"non-conformable factors {a.shape} and {b.shape}")
    if mats[0].shape[0] != mats[-1].shape[1]:
        raise InputError("product of factors is not square")
    if len(mats) == 1:
        return float(np.trace(mats[0]))
    head = reduce(np.matmul, mats[:-1])
    return float(np.sum(head * mats[-1].T))
