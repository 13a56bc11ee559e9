"""Closed-form squared CMMD estimators.

Notation follows the usual Gram-matrix conventions: ``P`` provides
``(x_i, y_i)``, ``i < n`` and ``Q`` provides ``(x'_j, z_j)``, ``j < m``. The
pooled covariates ``X~`` are the ``P`` covariates followed by the ``Q``
covariates. ``W_X = (K_XX + lam_p n I)^{-1}`` and likewise for ``Q``.

Every estimator has the three-term shape::

    Tr(W_X L_YY W_X S_XX) - 2 Tr(W_X L_YZ W_X' S_X'X) + Tr(W_X' L_ZZ W_X' S_X'X')

where ``S = Phi~^* C^s Phi~`` is the level-``s`` smoothing of the pooled
covariate Gram matrix (``S = K~`` at level 0). Outputs are never clamped at
zero.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import kernels as kern
from ._validation import check_positive
from .embeddings import (
    DEFAULT_LAMBDA,
    DEFAULT_LAMBDA_GRID,
    PairedDataset,
    pooled_covariance_gram,
    select_lambda_cv,
)
from .exceptions import InputError
from .linalg import matrix_power, ridge_weights, sym_eig, trace_product

__all__ = [
    "ESTIMATORS",
    "CmmdConfig",
    "CmmdEstimate",
    "DiscreteConditionalModel",
    "resolve_config",
    "cmmd0_sq",
    "cmmd1_sq",
    "cmmd2_sq",
    "cmmd_s_sq",
    "mmd_joint_sq",
    "estimate",
    "smoothing_matrix",
    "covariance_top_eigenvalue",
    "discrete_cmmd_sq",
    "PooledCmmd",
]

ESTIMATORS = ("naive", "shared_marginal_mmd", "doubly_robust")
_ESTIMATOR_ALIASES = {"joint_mmd": "shared_marginal_mmd", "dr": "doubly_robust"}


@dataclass(frozen=True)
class CmmdConfig:
    """Everything needed to compute one squared CMMD value.

    ``lambda_p``/``lambda_q``/``lambda_dr`` accept ``"cv"`` to select the ridge
    parameter by cross-validation over ``lambda_grid``. ``alpha=None`` is the
    default mixture weight ``n/(n+m)``. ``shared_marginal`` must be set for
    the joint-MMD estimator, which is only valid when ``P_X = Q_X``.
    ``overlap`` is the propensity guard used by the doubly robust estimator.
    """

    level: float = 1.0
    kernel_x: kern.KernelSpec = field(default_factory=kern.Gaussian)
    kernel_y: kern.KernelSpec = field(default_factory=kern.Gaussian)
    lambda_p: Union[float, str] = DEFAULT_LAMBDA
    lambda_q: Union[float, str] = DEFAULT_LAMBDA
    alpha: Optional[float] = None
    estimator: str = "naive"
    shared_marginal: bool = False
    lambda_dr: Union[float, str] = "cv"
    overlap: float = 1e-3
    lambda_grid: tuple = DEFAULT_LAMBDA_GRID
    cv_folds: int = 5
    cv_seed: int = 0

    def __post_init__(self):
        level = float(self.level)
        if not np.isfinite(level) or level < 0:
            raise InputError(f"level must be a real >= 0, got {self.level!r}")
        object.__setattr__(self, "level", level)
        object.__setattr__(self, "kernel_x", kern.kernel_from_config(self.kernel_x))
        object.__setattr__(self, "kernel_y", kern.kernel_from_config(self.kernel_y))
        est = _ESTIMATOR_ALIASES.get(self.estimator, self.estimator)
        if est not in ESTIMATORS:
            raise InputError(f"unknown estimator {self.estimator!r}; expected one of {ESTIMATORS}")
        object.__setattr__(self, "estimator", est)
        if est == "shared_marginal_mmd" and not self.shared_marginal:
            raise InputError(
                "the joint-MMD estimator needs P_X = Q_X; set shared_marginal=True to assert it"
            )
        for name in ("lambda_p", "lambda_q", "lambda_dr"):
            v = getattr(self, name)
            if isinstance(v, str):
                if v != "cv":
                    raise InputError(f"{name} must be a positive real or 'cv', got {v!r}")
            else:
                object.__setattr__(self, name, check_positive(v, name))
        if self.alpha is not None:
            a = float(self.alpha)
            if not 0.0 <= a <= 1.0:
                raise InputError(f"alpha must lie in [0, 1], got {self.alpha!r}")
            object.__setattr__(self, "alpha", a)
        if not 0.0 < float(self.overlap) < 0.5:
            raise InputError(f"overlap guard must lie in (0, 0.5), got {self.overlap!r}")
        object.__setattr__(self, "lambda_grid", tuple(float(g) for g in self.lambda_grid))

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return {
            "level": self.level,
            "estimator": self.estimator,
            "kernel_x": kern.kernel_to_config(self.kernel_x),
            "kernel_y": kern.kernel_to_config(self.kernel_y),
            "lambda_p": self.lambda_p,
            "lambda_q": self.lambda_q,
            "lambda_dr": self.lambda_dr,
            "alpha": self.alpha,
            "shared_marginal": self.shared_marginal,
            "overlap": self.overlap,
        }


@dataclass(frozen=True)
class CmmdEstimate:
    value: float
    config: CmmdConfig
    sample_sizes: tuple

    @property
    def level(self):
        return self.config.level

    def to_dict(self):
        n, m = self.sample_sizes
        return {"cmmd_squared": self.value, "n": n, "m": m, **self.config.to_dict()}


def resolve_config(dataP, dataQ, cfg):
    """Fix median bandwidths (on pooled data) and cross-validated ridge values.

    Naive ridge parameters are cross-validated on their own sample.
    """
    Xt = np.vstack([dataP.covariates, dataQ.covariates])
    Yt = np.vstack([dataP.outcomes, dataQ.outcomes])
    kx = kern.resolve(cfg.kernel_x, Xt)
    ky = kern.resolve(cfg.kernel_y, Yt)
    changes = {"kernel_x": kx, "kernel_y": ky}
    cv = dict(grid=cfg.lambda_grid, seed=cfg.cv_seed)
    if cfg.lambda_p == "cv":
        changes["lambda_p"] = select_lambda_cv(dataP, kx, ky, folds=min(cfg.cv_folds, dataP.n), **cv)
    if cfg.lambda_q == "cv":
        changes["lambda_q"] = select_lambda_cv(dataQ, kx, ky, folds=min(cfg.cv_folds, dataQ.n), **cv)
    return cfg.replace(**changes)


def _naive_parts(dataP, dataQ, cfg):
    cfg = resolve_config(dataP, dataQ, cfg)
    X, Xq = dataP.covariates, dataQ.covariates
    Y, Z = dataP.outcomes, dataQ.outcomes
    kx, ky = cfg.kernel_x, cfg.kernel_y
    parts = {
        "K_XX": kern.gram(kx, X),
        "K_QQ": kern.gram(kx, Xq),
        "K_QP": kern.gram(kx, Xq, X),
        "L_YY": kern.gram(ky, Y),
        "L_ZZ": kern.gram(ky, Z),
        "L_YZ": kern.gram(ky, Y, Z),
    }
    parts["W_X"] = ridge_weights(parts["K_XX"], cfg.lambda_p, dataP.n)
    parts["W_Q"] = ridge_weights(parts["K_QQ"], cfg.lambda_q, dataQ.n)
    return cfg, parts


def _pooled_weights(n, m, alpha):
    if alpha is None:
        return np.full(n + m, 1.0 / (n + m))
    wp = np.full(n, alpha / n)
    wq = np.full(m, (1.0 - alpha) / m)
    return np.concatenate([wp, wq])


def _result(value, cfg, dataP, dataQ):
    return CmmdEstimate(float(value), cfg, (dataP.n, dataQ.n))


def cmmd0_sq(dataP, dataQ, cfg=None):
    """Squared CMMD_0: Hilbert-Schmidt distance between the estimated CMOs."""
    cfg, g = _naive_parts(dataP, dataQ, cfg or CmmdConfig(level=0))
    WX, WQ = g["W_X"], g["W_Q"]
    value = (
        trace_product([WX, g["L_YY"], WX, g["K_XX"]])
        - 2 * trace_product([WX, g["L_YZ"], WQ, g["K_QP"]])
        + trace_product([WQ, g["L_ZZ"], WQ, g["K_QQ"]])
    )
    return _result(value, cfg.replace(level=0.0), dataP, dataQ)


def _cross_to_pooled(dataP, dataQ, kx):
    Xt = np.vstack([dataP.covariates, dataQ.covariates])
    return Xt, kern.gram(kx, dataP.covariates, Xt), kern.gram(kx, dataQ.covariates, Xt)


def cmmd1_sq(dataP, dataQ, cfg=None):
    """Squared CMMD_1: mixture-averaged squared distance between estimated CMEs."""
    cfg, g = _naive_parts(dataP, dataQ, cfg or CmmdConfig(level=1))
    _, KPt, KQt = _cross_to_pooled(dataP, dataQ, cfg.kernel_x)
    w = _pooled_weights(dataP.n, dataQ.n, cfg.alpha)
    WX, WQ = g["W_X"], g["W_Q"]
    value = (
        trace_product([WX, g["L_YY"], WX, KPt * w, KPt.T])
        - 2 * trace_product([WX, g["L_YZ"], WQ, KQt * w, KPt.T])
        + trace_product([WQ, g["L_ZZ"], WQ, KQt * w, KQt.T])
    )
    return _result(value, cfg.replace(level=1.0), dataP, dataQ)


def cmmd2_sq(dataP, dataQ, cfg=None):
    """Squared CMMD_2 through the CMO estimates smoothed by the pooled covariance."""
    cfg, g = _naive_parts(dataP, dataQ, cfg or CmmdConfig(level=2))
    Xt, KPt, KQt = _cross_to_pooled(dataP, dataQ, cfg.kernel_x)
    Kt = kern.gram(cfg.kernel_x, Xt)
    w = _pooled_weights(dataP.n, dataQ.n, cfg.alpha)
    mid = (w[:, None] * Kt) * w[None, :]
    WX, WQ = g["W_X"], g["W_Q"]
    value = (
        trace_product([WX, g["L_YY"], WX, KPt, mid, KPt.T])
        - 2 * trace_product([WX, g["L_YZ"], WQ, KQt, mid, KPt.T])
        + trace_product([WQ, g["L_ZZ"], WQ, KQt, mid, KQt.T])
    )
    return _result(value, cfg.replace(level=2.0), dataP, dataQ)


def mmd_joint_sq(dataP, dataQ, cfg=None):
    """Plain (biased) MMD between the joint samples under ``k (x) l``.

    Only a CMMD_2 estimate when the covariate marginals coincide.
    """
    cfg = resolve_config(dataP, dataQ, cfg or CmmdConfig(level=2))
    kx, ky = cfg.kernel_x, cfg.kernel_y
    n, m = dataP.n, dataQ.n
    X, Xq = dataP.covariates, dataQ.covariates
    Y, Z = dataP.outcomes, dataQ.outcomes
    value = (
        np.sum(kern.gram(ky, Y) * kern.gram(kx, X)) / n**2
        - 2 * np.sum(kern.gram(ky, Y, Z) * kern.gram(kx, X, Xq)) / (n * m)
        + np.sum(kern.gram(ky, Z) * kern.gram(kx, Xq)) / m**2
    )
    return _result(value, cfg.replace(level=2.0), dataP, dataQ)


def smoothing_matrix(K_pooled, level, weights=None):
    """``Phi~^* C^s Phi~`` for the pooled covariance ``C = sum_i w_i k_i (x) k_i``.

    With uniform weights ``1/N`` this is ``N * (K~/N)^(s+1)``. For general
    weights ``D`` it is ``K~^(1/2) (K~^(1/2) D K~^(1/2))^s K~^(1/2)``.
    """
    K = np.asarray(K_pooled, dtype=float)
    N = K.shape[0]
    s = float(level)
    if weights is None:
        return matrix_power(K / N, s + 1.0) * N
    w = np.asarray(weights, dtype=float)
    root = matrix_power(K, 0.5)
    inner = (root * w) @ root
    return root @ matrix_power(inner, s) @ root


def _three_term(WX, WQ, Lpp, Lpq, Lqq, Spp, Sqp, Sqq):
    A = WX @ Lpp @ WX
    B = WX @ Lpq @ WQ
    C = WQ @ Lqq @ WQ
    # Tr(M S) = sum(M * S.T)
    return float(np.sum(A * Spp.T) - 2.0 * np.sum(B * Sqp.T) + np.sum(C * Sqq.T))


def cmmd_s_sq(dataP, dataQ, cfg=None):
    """Squared CMMD at an arbitrary level ``s >= 0``.

    ``K~^(s+1)`` is computed from the spectral decomposition of the pooled
    covariate Gram matrix, so fractional levels are supported.
    """
    cfg = cfg or CmmdConfig()
    cfg, g = _naive_parts(dataP, dataQ, cfg)
    n, m = dataP.n, dataQ.n
    Xt = np.vstack([dataP.covariates, dataQ.covariates])
    Kt = kern.gram(cfg.kernel_x, Xt)
    w = None if cfg.alpha is None else _pooled_weights(n, m, cfg.alpha)
    S = smoothing_matrix(Kt, cfg.level, w)
    value = _three_term(
        g["W_X"], g["W_Q"], g["L_YY"], g["L_YZ"], g["L_ZZ"],
        S[:n, :n], S[n:, :n], S[n:, n:],
    )
    return _result(value, cfg, dataP, dataQ)


def covariance_top_eigenvalue(cov_p, cov_q, kernel_x, alpha=None):
    """Largest eigenvalue of the pooled covariance estimate."""
    Xt, w = pooled_covariance_gram(cov_p, cov_q, alpha=alpha)
    kx = kern.resolve(kernel_x, Xt)
    K = kern.gram(kx, Xt)
    root = np.sqrt(w)
    return float(sym_eig((root[:, None] * K) * root[None, :]).eigenvalues[0])


def estimate(dataP, dataQ, cfg, propensity=None):
    """Dispatch on ``cfg.estimator``."""
    if cfg.estimator == "shared_marginal_mmd":
        return mmd_joint_sq(dataP, dataQ, cfg)
    if cfg.estimator == "doubly_robust":
        from .doubly_robust import cmmd_dr_from_datasets

        if propensity is None:
            raise InputError("the doubly robust estimator needs a propensity model")
        return cmmd_dr_from_datasets(dataP, dataQ, propensity, cfg)
    return cmmd_s_sq(dataP, dataQ, cfg)


class PooledCmmd:
    """Naive / joint-MMD statistic for many splits of one pooled sample.

    Resampling tests only reassign points between ``P`` and ``Q``; the pooled
    covariates never change, so the pooled Grams and the smoothing matrix
    (a spectral function of ``K~``, hence permutation equivariant) are
    computed once and each split just indexes into them. Kernels and ridge
    parameters must already be resolved.
    """

    def __init__(self, pooled, cfg):
        if not kern.is_resolved(cfg.kernel_x) or not kern.is_resolved(cfg.kernel_y):
            raise InputError("PooledCmmd needs resolved kernels")
        if isinstance(cfg.lambda_p, str) or isinstance(cfg.lambda_q, str):
            raise InputError("PooledCmmd needs numeric ridge parameters")
        if cfg.estimator == "doubly_robust":
            raise InputError("PooledCmmd does not handle the doubly robust estimator")
        self.cfg = cfg
        self.N = pooled.n
        self.K = kern.gram(cfg.kernel_x, pooled.covariates)
        self.L = kern.gram(cfg.kernel_y, pooled.outcomes)
        self._S = None
        if cfg.estimator == "naive" and cfg.alpha is None:
            self._S = smoothing_matrix(self.K, cfg.level)

    def __call__(self, p_idx, q_idx):
        p_idx = np.asarray(p_idx)
        q_idx = np.asarray(q_idx)
        n, m = p_idx.size, q_idx.size
        if n == 0 or m == 0:
            raise InputError("both sides of a split must be non-empty")
        K, L = self.K, self.L
        Lpp = L[np.ix_(p_idx, p_idx)]
        Lpq = L[np.ix_(p_idx, q_idx)]
        Lqq = L[np.ix_(q_idx, q_idx)]
        Kpp = K[np.ix_(p_idx, p_idx)]
        Kqq = K[np.ix_(q_idx, q_idx)]
        if self.cfg.estimator == "shared_marginal_mmd":
            Kpq = K[np.ix_(p_idx, q_idx)]
            return float(
                np.sum(Lpp * Kpp) / n**2 - 2 * np.sum(Lpq * Kpq) / (n * m) + np.sum(Lqq * Kqq) / m**2
            )
        if self._S is not None:
            S = self._S
        else:
            order = np.concatenate([p_idx, q_idx])
            K_ord = K[np.ix_(order, order)]
            S_ord = smoothing_matrix(K_ord, self.cfg.level, _pooled_weights(n, m, self.cfg.alpha))
            inv = np.empty_like(order)
            inv[order] = np.arange(order.size)
            S = S_ord[np.ix_(inv, inv)]
        WX = ridge_weights(Kpp, self.cfg.lambda_p, n)
        WQ = ridge_weights(Kqq, self.cfg.lambda_q, m)
        return _three_term(
            WX, WQ, Lpp, Lpq, Lqq,
            S[np.ix_(p_idx, p_idx)], S[np.ix_(q_idx, p_idx)], S[np.ix_(q_idx, q_idx)],
        )


@dataclass(frozen=True)
class DiscreteConditionalModel:
    """Conditional probability table ``[i, j] = P(Y=i | X=j)`` plus ``P(X=j)``."""

    cond_table: np.ndarray
    marginal: np.ndarray

    def __post_init__(self):
        C = np.asarray(self.cond_table, dtype=float)
        mu = np.asarray(self.marginal, dtype=float).reshape(-1)
        if C.ndim != 2:
            raise InputError("cond_table must be a matrix")
        if C.shape[1] != mu.size:
            raise InputError(
                f"cond_table has {C.shape[1]} columns but marginal has {mu.size} entries"
            )
        if np.any(C < 0) or np.any(C > 1) or np.any(np.abs(C.sum(axis=0) - 1) > 1e-12):
            raise InputError("cond_table columns must be probability vectors")
        if np.any(mu < 0) or abs(mu.sum() - 1) > 1e-12:
            raise InputError("marginal must be a probability vector")
        object.__setattr__(self, "cond_table", C)
        object.__setattr__(self, "marginal", mu)

    @property
    def joint_table(self):
        """``[i, j] = P(X=j, Y=i)``."""
        return self.cond_table * self.marginal[None, :]


def discrete_cmmd_sq(modelP, modelQ, level):
    """Exact population squared CMMD under Kronecker-delta kernels.

    The covariance operator is ``diag(marginal)``, so level ``s`` equals
    ``sum_j marginal_j^s ||column_j difference||^2``: squared Frobenius
    distance of the tables at 0, marginal-weighted column distance at 1, and
    squared Frobenius distance of the joint tables at 2.
    """
    if modelP.cond_table.shape != modelQ.cond_table.shape:
        raise InputError(
            f"domain sizes differ: {modelP.cond_table.shape} vs {modelQ.cond_table.shape}"
        )
    if np.max(np.abs(modelP.marginal - modelQ.marginal)) > 1e-12:
        raise InputError("models must share the covariate marginal")
    s = float(level)
    if not np.isfinite(s) or s < 0:
        raise InputError(f"level must be a real >= 0, got {level!r}")
    diff = modelP.cond_table - modelQ.cond_table
    col_sq = np.sum(diff * diff, axis=0)
    if s == 0:
        return float(np.sum(col_sq))
    return float(np.sum(modelP.marginal**s * col_sq))
