"""Conditional mean operator / embedding estimators.

The dual estimator of the conditional mean operator is represented by its
training data and the ridge weight matrix ``W = (K_XX + lam*n*I)^{-1}``. The
conditional mean embedding at ``x`` is ``sum_i beta_i(x) l(., y_i)`` with
``beta(x) = W K_{X,x}``; every inner product against it reduces to outcome
Gram matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from sklearn.base import BaseEstimator

from . import kernels as kern
from ._validation import as_point, as_points, check_positive, check_same_dim
from .exceptions import InputError
from .linalg import ridge_weights

__all__ = [
    "DEFAULT_LAMBDA",
    "DEFAULT_LAMBDA_GRID",
    "PairedDataset",
    "CmoModel",
    "PrimalCmoModel",
    "fit_cmo",
    "cme_weights",
    "cme_weight_matrix",
    "fit_cmo_primal",
    "pooled_covariance_gram",
    "select_lambda_cv",
    "cv_loss_from_grams",
    "select_lambda_from_grams",
    "ConditionalMeanEmbedding",
]

DEFAULT_LAMBDA = 0.1
DEFAULT_LAMBDA_GRID = tuple(float(v) for v in np.logspace(-5, 1, 13))


@dataclass(frozen=True)
class PairedDataset:
    """``n`` covariate/outcome pairs drawn from one joint distribution."""

    covariates: np.ndarray
    outcomes: np.ndarray

    def __post_init__(self):
        X = as_points(self.covariates, "covariates")
        Y = as_points(self.outcomes, "outcomes")
        if X.shape[0] != Y.shape[0]:
            raise InputError(
                f"covariates and outcomes differ in length: {X.shape[0]} vs {Y.shape[0]}"
            )
        X.setflags(write=False)
        Y.setflags(write=False)
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "outcomes", Y)

    def __len__(self):
        return self.covariates.shape[0]

    @property
    def n(self):
        return self.covariates.shape[0]

    def subset(self, idx):
        idx = np.asarray(idx)
        return PairedDataset(self.covariates[idx], self.outcomes[idx])

    @staticmethod
    def concat(a, b):
        return PairedDataset(
            np.vstack([a.covariates, b.covariates]), np.vstack([a.outcomes, b.outcomes])
        )


@dataclass(frozen=True)
class CmoModel:
    train: PairedDataset
    kernel_x: kern.KernelSpec
    kernel_y: kern.KernelSpec
    lam: float
    weights: np.ndarray = field(repr=False)

    @property
    def n(self):
        return self.train.n


def fit_cmo(data, kernel_x, kernel_y, lam=DEFAULT_LAMBDA):
    """Fit the dual CMO estimator on ``data``.

    Kernels declared with ``bandwidth="median"`` are resolved on the training
    covariates / outcomes.
    """
    lam = check_positive(lam, "lambda")
    kx = kern.resolve(kernel_x, data.covariates)
    ky = kern.resolve(kernel_y, data.outcomes)
    K = kern.gram(kx, data.covariates)
    W = ridge_weights(K, lam, data.n)
    W.setflags(write=False)
    return CmoModel(data, kx, ky, lam, W)


def cme_weight_matrix(model, X):
    """``beta`` for many query points: column ``j`` is ``beta(X[j])``."""
    Xq = as_points(X, "X")
    check_same_dim(model.train.covariates, Xq, ("training covariates", "query points"))
    return model.weights @ kern.gram(model.kernel_x, model.train.covariates, Xq)


def cme_weights(model, x):
    """``beta(x) = W K_{X,x}`` for a single point ``x`` (length ``n``)."""
    p = as_point(x)
    if p.size != model.train.covariates.shape[1]:
        raise InputError(
            f"dimension mismatch: model covariates have d={model.train.covariates.shape[1]},"
            f" x has d={p.size}"
        )
    return cme_weight_matrix(model, p[None, :])[:, 0]


@dataclass(frozen=True)
class PrimalCmoModel:
    """CMO in primal form: a ``(p, d)`` matrix acting on explicit features."""

    weight_matrix: np.ndarray
    feature_x: Optional[Callable] = None
    feature_y: Optional[Callable] = None

    def apply(self, features):
        """Map covariate features ``(k, d)`` to outcome features ``(k, p)``."""
        F = as_points(features, "features")
        if F.shape[1] != self.weight_matrix.shape[1]:
            raise InputError(
                f"feature dimension {F.shape[1]} does not match operator input "
                f"dimension {self.weight_matrix.shape[1]}"
            )
        return F @ self.weight_matrix.T

    def embed(self, X):
        if self.feature_x is None:
            raise InputError("no covariate feature map attached")
        return self.apply(self.feature_x(X))


def fit_cmo_primal(features_x, features_y, lam, feature_x=None, feature_y=None):
    """Primal ridge estimate ``Psi_Y Phi_X^T (Phi_X Phi_X^T + lam*n*I_d)^{-1}``.

    ``features_x`` is ``(n, d)``, ``features_y`` is ``(n, p)``; rows are aligned
    samples. Returns the ``(p, d)`` operator matrix.
    """
    Fx = as_points(features_x, "features_x")
    Fy = as_points(features_y, "features_y")
    if Fx.shape[0] != Fy.shape[0]:
        raise InputError("features_x and features_y must have the same number of rows")
    lam = check_positive(lam, "lambda")
    n, d = Fx.shape
    A = Fx.T @ Fx + lam * n * np.eye(d)
    # C A = Fy^T Fx  with A symmetric  =>  A C^T = Fx^T Fy
    C = np.linalg.solve(A, Fx.T @ Fy).T
    return PrimalCmoModel(C, feature_x, feature_y)


def pooled_covariance_gram(cov_p, cov_q, kernel_x=None, alpha=None):
    """Pool two covariate samples for the mixture covariance estimate.

    Returns ``(X_pooled, w)`` with ``w = alpha/n`` on the ``n`` points from
    ``cov_p`` and ``(1 - alpha)/m`` on the ``m`` points from ``cov_q``, so that
    the covariance estimate is ``sum_i w_i k(., x_i) (x) k(., x_i)``.
    ``alpha=None`` means ``n / (n + m)``, i.e. uniform weights ``1/(n+m)``.
    ``kernel_x`` is accepted for interface symmetry; weights do not depend on it.
    """
    Xp = as_points(cov_p, "P covariates", allow_empty=True)
    Xq = as_points(cov_q, "Q covariates", allow_empty=True)
    n, m = Xp.shape[0], Xq.shape[0]
    if alpha is None:
        if n + m == 0:
            raise InputError("both covariate samples are empty")
        alpha = n / (n + m)
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise InputError(f"alpha must lie in [0, 1], got {alpha}")
    if n == 0 and alpha > 0:
        raise InputError("P covariates are empty but alpha > 0")
    if m == 0 and alpha < 1:
        raise InputError("Q covariates are empty but alpha < 1")
    if n and m:
        check_same_dim(Xp, Xq, ("P covariates", "Q covariates"))
    wp = np.full(n, alpha / n) if n else np.empty(0)
    wq = np.full(m, (1.0 - alpha) / m) if m else np.empty(0)
    parts = [a for a in (Xp, Xq) if a.shape[0]]
    return np.vstack(parts), np.concatenate([wp, wq])


def _fold_assignment(n, folds, seed):
    perm = np.random.default_rng(seed).permutation(n)
    return np.array_split(perm, folds)


def cv_loss_from_grams(K, L, grid, folds=5, seed=0):
    """Mean held-out RKHS regression loss for each ``lam`` in ``grid``.

    ``K`` is the covariate Gram and ``L`` the Gram of the regression targets
    (outcome features), both ``(n, n)``. The loss of a held-out point ``j`` is
    ``||l(., y_j) - mu_hat(x_j)||^2``. Folds are contiguous blocks of a
    seeded permutation.
    """
    K = np.asarray(K, dtype=float)
    L = np.asarray(L, dtype=float)
    n = K.shape[0]
    folds = int(folds)
    if folds < 2:
        raise InputError(f"folds must be >= 2, got {folds}")
    if folds > n:
        raise InputError(f"folds ({folds}) exceeds sample size ({n})")
    grid = np.asarray([check_positive(g, "lambda grid value") for g in grid])
    if grid.size == 0:
        raise InputError("lambda grid is empty")
    total = np.zeros(grid.size)
    for test in _fold_assignment(n, folds, seed):
        train = np.setdiff1d(np.arange(n), test, assume_unique=True)
        n_tr = train.size
        evals, V = np.linalg.eigh(K[np.ix_(train, train)])
        evals = np.clip(evals, 0.0, None)
        Kc = V.T @ K[np.ix_(train, test)]
        Lc = V.T @ L[np.ix_(train, test)]
        Ltt = V.T @ L[np.ix_(train, train)] @ V
        base = np.diag(L)[test].sum()
        for g, lam in enumerate(grid):
            inv = 1.0 / (evals + lam * n_tr)
            B = inv[:, None] * Kc  # beta in the eigenbasis, one column per test point
            total[g] += base - 2.0 * np.sum(B * Lc) + np.sum(B * (Ltt @ B))
    return total / n


def select_lambda_from_grams(K, L, grid=DEFAULT_LAMBDA_GRID, folds=5, seed=0):
    grid = [float(g) for g in grid]
    if len(grid) == 1:
        return check_positive(grid[0], "lambda grid value")
    losses = cv_loss_from_grams(K, L, grid, folds, seed)
    best = losses.min()
    tied = np.flatnonzero(losses <= best + 1e-12 * max(1.0, abs(best)))
    return max(grid[i] for i in tied)


def select_lambda_cv(data, kernel_x, kernel_y, grid=DEFAULT_LAMBDA_GRID, folds=5, seed=0):
    """Choose ``lam`` from ``grid`` by k-fold cross-validation.

    Ties go to the larger value.
    """
    if len(grid) == 0:
        raise InputError("lambda grid is empty")
    if int(folds) > data.n:
        raise InputError(f"folds ({folds}) exceeds sample size ({data.n})")
    kx = kern.resolve(kernel_x, data.covariates)
    ky = kern.resolve(kernel_y, data.outcomes)
    K = kern.gram(kx, data.covariates)
    L = kern.gram(ky, data.outcomes)
    return select_lambda_from_grams(K, L, grid, folds, seed)


class ConditionalMeanEmbedding(BaseEstimator):
    """Kernel ridge estimate of the conditional mean embedding of ``Y | X``.

    Parameters
    ----------
    kernel_x, kernel_y : KernelSpec, str or dict, default="gaussian"
        Covariate and outcome kernels; see :func:`kernels.kernel_from_config`.
        Gaussian kernels default to the median heuristic.
    lam : float or "cv", default=0.1
        Ridge parameter. ``"cv"`` selects it from ``lambda_grid``.
    lambda_grid : sequence of float
        Candidates used when ``lam="cv"``.
    cv_folds : int, default=5
    random_state : int, default=0
        Seed for the fold shuffle.

    Attributes
    ----------
    model_ : CmoModel
    lambda_ : float
    """

    def __init__(
        self,
        kernel_x="gaussian",
        kernel_y="gaussian",
        lam=DEFAULT_LAMBDA,
        lambda_grid=DEFAULT_LAMBDA_GRID,
        cv_folds=5,
        random_state=0,
    ):
        self.kernel_x = kernel_x
        self.kernel_y = kernel_y
        self.lam = lam
        self.lambda_grid = lambda_grid
        self.cv_folds = cv_folds
        self.random_state = random_state

    def fit(self, X, Y):
        data = PairedDataset(X, Y)
        kx = kern.kernel_from_config(self.kernel_x)
        ky = kern.kernel_from_config(self.kernel_y)
        if isinstance(self.lam, str):
            if self.lam != "cv":
                raise InputError(f"lam must be a positive float or 'cv', got {self.lam!r}")
            lam = select_lambda_cv(
                data, kx, ky, self.lambda_grid, min(self.cv_folds, data.n), self.random_state
            )
        else:
            lam = self.lam
        self.model_ = fit_cmo(data, kx, ky, lam)
        self.lambda_ = self.model_.lam
        self.n_features_in_ = data.covariates.shape[1]
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("ConditionalMeanEmbedding is not fitted yet")

    def weights(self, X):
        """Embedding weights, one row ``beta(x)`` per query point."""
        self._check_fitted()
        return cme_weight_matrix(self.model_, X).T

    def evaluate(self, X, y_points):
        """``<mu_hat(x_i), l(., y_j)>`` as an array of shape ``(len(X), len(y_points))``."""
        self._check_fitted()
        B = self.weights(X)
        Ly = kern.gram(self.model_.kernel_y, self.model_.train.outcomes, y_points)
        return B @ Ly

    def predict(self, X):
        """Weighted average of training outcomes, ``sum_i beta_i(x) y_i``.

        With a linear outcome kernel this is the estimated conditional mean.
        """
        self._check_fitted()
        pred = self.weights(X) @ self.model_.train.outcomes
        return pred[:, 0] if pred.shape[1] == 1 else pred

    def score(self, X, Y):
        """Negative mean RKHS loss ``||l(., y) - mu_hat(x)||^2`` on ``(X, Y)``."""
        self._check_fitted()
        data = PairedDataset(X, Y)
        ky = self.model_.kernel_y
        Ytr = self.model_.train.outcomes
        B = self.weights(data.covariates)
        self_terms = np.array([kern.eval_kernel(ky, y, y) for y in data.outcomes])
        cross = np.sum(B * kern.gram(ky, data.outcomes, Ytr), axis=1)
        quad = np.sum((B @ kern.gram(ky, Ytr)) * B, axis=1)
        return -float(np.mean(self_terms - 2 * cross + quad))
