"""scikit-learn style front ends.

Both estimators take one stacked sample ``(X, Y, t)`` where ``t[i] = 1``
marks points drawn from ``P`` and ``t[i] = 0`` points drawn from ``Q``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import as_points
from .cmmd import CmmdConfig, estimate
from .doubly_robust import PropensityModel
from .embeddings import DEFAULT_LAMBDA, DEFAULT_LAMBDA_GRID, PairedDataset
from .exceptions import InputError
from .testing import TestConfig, run_test

__all__ = ["CMMD", "ConditionalTwoSampleTest", "split_by_label"]


def split_by_label(X, Y, t):
    """Split a stacked labelled sample into ``(dataP, dataQ)``."""
    X = as_points(X, "X")
    Y = as_points(Y, "Y")
    t = np.asarray(t).reshape(-1)
    if not (X.shape[0] == Y.shape[0] == t.size):
        raise InputError(f"X, Y and t have inconsistent lengths {X.shape[0]}, {Y.shape[0]}, {t.size}")
    if not np.all((t == 0) | (t == 1)):
        raise InputError("t must contain only 0 and 1")
    mask = t == 1
    if mask.all() or not mask.any():
        raise InputError("both labels must be present in t")
    return PairedDataset(X[mask], Y[mask]), PairedDataset(X[~mask], Y[~mask])


def _propensity(p):
    if p is None or isinstance(p, PropensityModel):
        return p
    if isinstance(p, str):
        return PropensityModel.from_config({"type": "analytic", "name": p})
    if isinstance(p, (int, float)):
        return PropensityModel.constant(p)
    return PropensityModel.from_config(p)


class CMMD(BaseEstimator):
    """Squared conditional MMD between the ``t=1`` and ``t=0`` samples.

    Parameters
    ----------
    level : float, default=1.0
        Smoothing level ``s``: 0 compares conditional mean operators, 1
        conditional mean embeddings averaged over the pooled covariates, 2
        joint embeddings.
    kernel_x, kernel_y : KernelSpec, dict or str, default="gaussian"
        Covariate and outcome kernels. Median bandwidths are resolved on the
        pooled sample.
    lambda_p, lambda_q : float or "cv", default=0.1
        Ridge parameters of the two conditional mean operators.
    alpha : float or None
        Mixture weight of ``P`` in the pooled covariance; ``None`` uses
        ``n / (n + m)``.
    estimator : {"naive", "joint_mmd", "dr"}, default="naive"
    shared_marginal : bool, default=False
        Assert ``P_X = Q_X``; required by ``joint_mmd``.
    lambda_dr : float or "cv", default="cv"
        Ridge parameter of the pseudo-outcome regression.
    propensity : PropensityModel, str, float or dict, optional
        Known ``P(t=1 | x)``; required by ``dr``.

    Attributes
    ----------
    value_ : float
    estimate_ : CmmdEstimate
        Includes the resolved configuration.
    """

    def __init__(
        self,
        level=1.0,
        kernel_x="gaussian",
        kernel_y="gaussian",
        lambda_p=DEFAULT_LAMBDA,
        lambda_q=DEFAULT_LAMBDA,
        alpha=None,
        estimator="naive",
        shared_marginal=False,
        lambda_dr="cv",
        propensity=None,
        lambda_grid=DEFAULT_LAMBDA_GRID,
        cv_folds=5,
    ):
        self.level = level
        self.kernel_x = kernel_x
        self.kernel_y = kernel_y
        self.lambda_p = lambda_p
        self.lambda_q = lambda_q
        self.alpha = alpha
        self.estimator = estimator
        self.shared_marginal = shared_marginal
        self.lambda_dr = lambda_dr
        self.propensity = propensity
        self.lambda_grid = lambda_grid
        self.cv_folds = cv_folds

    def _config(self):
        return CmmdConfig(
            level=self.level,
            kernel_x=self.kernel_x,
            kernel_y=self.kernel_y,
            lambda_p=self.lambda_p,
            lambda_q=self.lambda_q,
            alpha=self.alpha,
            estimator=self.estimator,
            shared_marginal=self.shared_marginal,
            lambda_dr=self.lambda_dr,
            lambda_grid=self.lambda_grid,
            cv_folds=self.cv_folds,
        )

    def fit(self, X, Y, t):
        dataP, dataQ = split_by_label(X, Y, t)
        self.estimate_ = estimate(dataP, dataQ, self._config(), _propensity(self.propensity))
        self.value_ = self.estimate_.value
        self.n_features_in_ = dataP.covariates.shape[1]
        return self


class ConditionalTwoSampleTest(CMMD):
    """Bootstrap test of ``P_{Y|X} = Q_{Y|X}`` with a CMMD statistic.

    Takes every :class:`CMMD` parameter plus the ones below.

    Parameters
    ----------
    algorithm : {"pooled", "propensity"}, default="pooled"
        ``pooled`` permutes the pooled sample (valid when ``P_X = Q_X``);
        ``propensity`` relabels every point with probability ``e(x)``.
    significance : float, default=0.05
    n_bootstrap : int, default=200
    random_state : int, default=0
    n_jobs : int, default=1

    Attributes
    ----------
    result_ : TestResult
    statistic_, p_value_, reject_
    """

    def __init__(
        self,
        level=1.0,
        kernel_x="gaussian",
        kernel_y="gaussian",
        lambda_p=DEFAULT_LAMBDA,
        lambda_q=DEFAULT_LAMBDA,
        alpha=None,
        estimator="naive",
        shared_marginal=False,
        lambda_dr="cv",
        propensity=None,
        lambda_grid=DEFAULT_LAMBDA_GRID,
        cv_folds=5,
        algorithm="pooled",
        significance=0.05,
        n_bootstrap=200,
        random_state=0,
        n_jobs=1,
    ):
        super().__init__(
            level=level,
            kernel_x=kernel_x,
            kernel_y=kernel_y,
            lambda_p=lambda_p,
            lambda_q=lambda_q,
            alpha=alpha,
            estimator=estimator,
            shared_marginal=shared_marginal,
            lambda_dr=lambda_dr,
            propensity=propensity,
            lambda_grid=lambda_grid,
            cv_folds=cv_folds,
        )
        self.algorithm = algorithm
        self.significance = significance
        self.n_bootstrap = n_bootstrap
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, Y, t):
        dataP, dataQ = split_by_label(X, Y, t)
        cfg = TestConfig(
            statistic=self._config(),
            significance=self.significance,
            n_bootstrap=self.n_bootstrap,
            seed=self.random_state,
            algorithm=self.algorithm,
            propensity=_propensity(self.propensity),
            n_jobs=self.n_jobs,
        )
        self.result_ = run_test(dataP, dataQ, cfg)
        self.statistic_ = self.result_.statistic
        self.value_ = self.statistic_
        self.p_value_ = self.result_.p_value
        self.reject_ = self.result_.reject
        self.n_features_in_ = dataP.covariates.shape[1]
        return self
