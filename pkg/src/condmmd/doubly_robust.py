"""Doubly robust CMMD estimation from pseudo-outcomes.

Both samples are merged into one labelled sample ``(t_i, x_i, w_i)`` with
``t_i = 1`` for points from ``P``. Given a propensity ``e(x) = P(T=1 | x)``
and outcome models ``mu_Y``, ``mu_Z``, the pseudo-outcome of point ``i`` is::

    psi_i = e~_i * (l(., w_i) - (1 - e_i) mu_Y(x_i) - e_i mu_Z(x_i)),
    e~_i  = (t_i - e_i) / (e_i (1 - e_i))

and the CMO difference is estimated by one kernel ridge regression of the
pseudo-outcomes on the pooled covariates. Everything is expressed through the
Gram matrix ``G = Psi^* Psi`` of the pseudo-outcomes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels as kern
from ._validation import as_point, as_points
from .cmmd import CmmdConfig, CmmdEstimate, _pooled_weights, smoothing_matrix
from .embeddings import (
    PairedDataset,
    cme_weight_matrix,
    fit_cmo,
    select_lambda_cv,
    select_lambda_from_grams,
)
from .exceptions import InputError, OverlapError
from .linalg import ridge_weights

__all__ = [
    "PropensityModel",
    "CombinedSample",
    "PseudoOutcomeAssembly",
    "pseudo_outcome_assembly",
    "cmmd_dr_sq",
    "cmmd_dr_from_datasets",
    "dr_difference_weights",
    "DEFAULT_OVERLAP",
]

DEFAULT_OVERLAP = 1e-3


@dataclass(frozen=True)
class PropensityModel:
    """Known propensity ``e(x)``: analytic function, constant or lookup table.

    Build with :meth:`analytic`, :meth:`constant`, :meth:`tabulated` or
    :meth:`from_config`. Calling the model on ``(k, d)`` points returns ``k``
    values, each checked to lie strictly inside ``(0, 1)``.
    """

    kind: str
    func: Optional[Callable] = field(default=None, compare=False)
    value: Optional[float] = None
    table: Optional[dict] = None
    name: Optional[str] = None

    @classmethod
    def analytic(cls, func, name=None):
        if not callable(func):
            raise InputError("analytic propensity needs a callable")
        return cls("analytic", func=func, name=name)

    @classmethod
    def constant(cls, value):
        v = float(value)
        if not 0.0 < v < 1.0:
            raise InputError(f"constant propensity must lie in (0, 1), got {value!r}")
        return cls("constant", value=v)

    @classmethod
    def tabulated(cls, table):
        items = table.items() if isinstance(table, dict) else table
        clean = {}
        for key, v in items:
            clean[_table_key(key)] = float(v)
        return cls("tabulated", table=clean)

    @classmethod
    def from_config(cls, cfg):
        """``{"type": "analytic", "name": ...}``, ``{"type": "constant", "value": v}``
        or ``{"type": "tabulated", "table": {...}}``."""
        if isinstance(cfg, PropensityModel):
            return cfg
        if not isinstance(cfg, dict) or "type" not in cfg:
            raise InputError(f"propensity config must be a mapping with 'type', got {cfg!r}")
        kind = cfg["type"]
        if kind == "constant":
            return cls.constant(cfg["value"])
        if kind == "analytic":
            from .datagen import named_propensity

            return named_propensity(cfg["name"])
        if kind == "tabulated":
            return cls.tabulated(cfg["table"])
        raise InputError(f"unknown propensity type {kind!r}")

    def to_config(self):
        if self.kind == "constant":
            return {"type": "constant", "value": self.value}
        if self.kind == "analytic":
            return {"type": "analytic", "name": self.name}
        return {"type": "tabulated", "table": [[list(k), v] for k, v in self.table.items()]}

    def __call__(self, X):
        P = as_points(X, "covariates")
        if self.kind == "constant":
            e = np.full(P.shape[0], self.value)
        elif self.kind == "analytic":
            e = np.asarray(self.func(P), dtype=float).reshape(-1)
            if e.size != P.shape[0]:
                raise InputError("analytic propensity returned the wrong number of values")
        else:
            try:
                e = np.array([self.table[_table_key(row)] for row in P])
            except KeyError as exc:
                raise InputError(f"no tabulated propensity for covariate {exc.args[0]!r}") from None
        bad = ~((e > 0.0) & (e < 1.0))
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise OverlapError(
                f"propensity {e[i]!r} at covariate {P[i].tolist()} is not strictly inside (0, 1)"
            )
        return e


def _table_key(key):
    if isinstance(key, str):
        key = [float(v) for v in key.strip("()[] ").split(",") if v.strip()]
    arr = np.atleast_1d(np.asarray(key, dtype=float))
    return tuple(float(v) for v in arr.reshape(-1))


@dataclass(frozen=True)
class CombinedSample:
    """Merged sample with treatment labels ``t`` (1 = from ``P``, 0 = from ``Q``)."""

    covariates: np.ndarray
    outcomes: np.ndarray
    treatment: np.ndarray

    def __post_init__(self):
        X = as_points(self.covariates, "covariates")
        W = as_points(self.outcomes, "outcomes")
        t = np.asarray(self.treatment).reshape(-1)
        if not (X.shape[0] == W.shape[0] == t.size):
            raise InputError("covariates, outcomes and treatment must have equal length")
        if not np.all((t == 0) | (t == 1)):
            raise InputError("treatment entries must be 0 or 1")
        t = t.astype(int)
        if t.min() == t.max():
            raise InputError("the combined sample needs points from both distributions")
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "outcomes", W)
        object.__setattr__(self, "treatment", t)

    @property
    def n(self):
        return self.treatment.size

    @classmethod
    def from_datasets(cls, dataP, dataQ):
        return cls(
            np.vstack([dataP.covariates, dataQ.covariates]),
            np.vstack([dataP.outcomes, dataQ.outcomes]),
            np.concatenate([np.ones(dataP.n, int), np.zeros(dataQ.n, int)]),
        )

    def split(self):
        p = self.treatment == 1
        return (
            PairedDataset(self.covariates[p], self.outcomes[p]),
            PairedDataset(self.covariates[~p], self.outcomes[~p]),
        )


@dataclass(frozen=True)
class PseudoOutcomeAssembly:
    """Pieces of ``Psi^* Psi`` in factored form.

    ``L_WY[i, j] = <l(., w_i), mu_Y(x_j)>``, ``L_YZ[i, j] = <mu_Y(x_i), mu_Z(x_j)>``
    and so on; ``beta_Y``/``beta_Z`` hold the model weights at the pooled
    covariates (one column per pooled point).
    """

    sample: CombinedSample
    kernel_x: kern.KernelSpec
    kernel_y: kern.KernelSpec
    e_hat: np.ndarray
    e_tilde: np.ndarray
    L_WW: np.ndarray = field(repr=False)
    L_WY: np.ndarray = field(repr=False)
    L_WZ: np.ndarray = field(repr=False)
    L_YY: np.ndarray = field(repr=False)
    L_YZ: np.ndarray = field(repr=False)
    L_ZZ: np.ndarray = field(repr=False)
    model_y: object = field(repr=False)
    model_z: object = field(repr=False)
    beta_y: np.ndarray = field(repr=False)
    beta_z: np.ndarray = field(repr=False)

    def psi_gram(self):
        """``Psi^* Psi``, an ``(n_t, n_t)`` PSD matrix."""
        a = 1.0 - self.e_hat
        b = self.e_hat
        L_YW = self.L_WY.T
        L_ZW = self.L_WZ.T
        inner = (
            self.L_WW
            - self.L_WY * a[None, :]
            - self.L_WZ * b[None, :]
            - a[:, None] * L_YW
            + a[:, None] * self.L_YY * a[None, :]
            + a[:, None] * self.L_YZ * b[None, :]
            - b[:, None] * L_ZW
            + b[:, None] * self.L_YZ.T * a[None, :]
            + b[:, None] * self.L_ZZ * b[None, :]
        )
        G = self.e_tilde[:, None] * inner * self.e_tilde[None, :]
        return 0.5 * (G + G.T)

    def evaluate(self, y_points):
        """``<l(., y_k), psi_i>`` as an array of shape ``(len(y_points), n_t)``.

        With a linear outcome kernel and ``y = 1`` this is the scalar
        pseudo-outcome itself.
        """
        Yq = as_points(y_points, "y_points")
        ky = self.kernel_y
        direct = kern.gram(ky, Yq, self.sample.outcomes)
        via_y = kern.gram(ky, Yq, self.model_y.train.outcomes) @ self.beta_y
        via_z = kern.gram(ky, Yq, self.model_z.train.outcomes) @ self.beta_z
        e = self.e_hat
        return (direct - (1.0 - e) * via_y - e * via_z) * self.e_tilde[None, :]


def pseudo_outcome_assembly(sample, prop, model_y, model_z, kernel_y=None, kernel_x=None,
                            overlap=DEFAULT_OVERLAP):
    """Evaluate propensities and all Gram blocks needed for ``Psi^* Psi``.

    Raises :class:`OverlapError` when a propensity falls outside
    ``[overlap, 1 - overlap]``.
    """
    ky = model_y.kernel_y if kernel_y is None else kern.kernel_from_config(kernel_y)
    ky = kern.resolve(ky, sample.outcomes)
    if model_y.kernel_y != ky or model_z.kernel_y != ky:
        raise InputError("outcome models must be fitted with the outcome kernel in use")
    kx = model_y.kernel_x if kernel_x is None else kern.resolve(
        kern.kernel_from_config(kernel_x), sample.covariates
    )
    X, W = sample.covariates, sample.outcomes
    e = prop(X) if callable(prop) else np.asarray(prop, dtype=float).reshape(-1)
    if e.size != sample.n:
        raise InputError("need one propensity value per pooled point")
    outside = (e < overlap) | (e > 1.0 - overlap)
    if np.any(outside):
        i = int(np.flatnonzero(outside)[0])
        raise OverlapError(
            f"propensity {e[i]:.3g} at covariate {X[i].tolist()} is outside "
            f"[{overlap:g}, {1 - overlap:g}]"
        )
    t = sample.treatment
    e_tilde = (t - e) / (e * (1.0 - e))
    BY = cme_weight_matrix(model_y, X)
    BZ = cme_weight_matrix(model_z, X)
    Ytr = model_y.train.outcomes
    Ztr = model_z.train.outcomes
    return PseudoOutcomeAssembly(
        sample=sample,
        kernel_x=kx,
        kernel_y=ky,
        e_hat=e,
        e_tilde=e_tilde,
        L_WW=kern.gram(ky, W),
        L_WY=kern.gram(ky, W, Ytr) @ BY,
        L_WZ=kern.gram(ky, W, Ztr) @ BZ,
        L_YY=BY.T @ kern.gram(ky, Ytr) @ BY,
        L_YZ=BY.T @ kern.gram(ky, Ytr, Ztr) @ BZ,
        L_ZZ=BZ.T @ kern.gram(ky, Ztr) @ BZ,
        model_y=model_y,
        model_z=model_z,
        beta_y=BY,
        beta_z=BZ,
    )


def _dr_value(G, K, W, level, weights):
    S = smoothing_matrix(K, level, weights)
    M = W @ S @ W
    return float(np.sum(G * M.T))


def cmmd_dr_sq(sample, prop, model_y, model_z, cfg=None, assembly=None):
    """Doubly robust squared CMMD at level ``cfg.level``.

    ``Tr(Psi^* Psi W S W)`` with ``W = (K~ + n_t lam I)^{-1}`` and ``S`` the
    pooled smoothing matrix (``K~`` at level 0, ``K~^2 / n_t`` at level 1, ...).
    ``cfg.lambda_dr="cv"`` cross-validates the pseudo-outcome regression.
    """
    cfg = cfg or CmmdConfig(estimator="doubly_robust")
    if assembly is None:
        assembly = pseudo_outcome_assembly(
            sample, prop, model_y, model_z, cfg.kernel_y, cfg.kernel_x, cfg.overlap
        )
    G = assembly.psi_gram()
    K = kern.gram(assembly.kernel_x, sample.covariates)
    lam = cfg.lambda_dr
    if lam == "cv":
        lam = select_lambda_from_grams(
            K, G, cfg.lambda_grid, min(cfg.cv_folds, sample.n), cfg.cv_seed
        )
    W = ridge_weights(K, lam, sample.n)
    weights = None
    if cfg.alpha is not None:
        order = np.argsort(-sample.treatment, kind="stable")
        n = int(sample.treatment.sum())
        w_sorted = _pooled_weights(n, sample.n - n, cfg.alpha)
        weights = np.empty(sample.n)
        weights[order] = w_sorted
    value = _dr_value(G, K, W, cfg.level, weights)
    resolved = cfg.replace(
        kernel_x=assembly.kernel_x,
        kernel_y=assembly.kernel_y,
        lambda_dr=lam,
        lambda_p=model_y.lam,
        lambda_q=model_z.lam,
        estimator="doubly_robust",
    )
    n = int(sample.treatment.sum())
    return CmmdEstimate(value, resolved, (n, sample.n - n))


def cmmd_dr_from_datasets(dataP, dataQ, prop, cfg):
    """Fit the standard per-sample CME models and return the DR estimate."""
    sample = CombinedSample.from_datasets(dataP, dataQ)
    kx = kern.resolve(cfg.kernel_x, sample.covariates)
    ky = kern.resolve(cfg.kernel_y, sample.outcomes)
    lam = {}
    for key, data in (("p", dataP), ("q", dataQ)):
        v = getattr(cfg, f"lambda_{key}")
        if v == "cv":
            v = select_lambda_cv(data, kx, ky, cfg.lambda_grid, min(cfg.cv_folds, data.n),
                                 cfg.cv_seed)
        lam[key] = v
    model_y = fit_cmo(dataP, kx, ky, lam["p"])
    model_z = fit_cmo(dataQ, kx, ky, lam["q"])
    return cmmd_dr_sq(sample, prop, model_y, model_z, cfg.replace(kernel_x=kx, kernel_y=ky))


def dr_difference_weights(assembly, w_ridge, x):
    """Coefficients ``c(x) = W K_{X~, x}`` over the pseudo-outcomes.

    ``<g, Delta_DR k(., x)> = sum_i c_i(x) <g, psi_i>``; for a linear outcome
    kernel, ``c(x) @ assembly.evaluate([[1.0]])[0]`` is the estimated
    difference of conditional means at ``x``.
    """
    X = assembly.sample.covariates
    p = as_point(x)
    if p.size != X.shape[1]:
        raise InputError(f"dimension mismatch: covariates have d={X.shape[1]}, x has d={p.size}")
    W = np.asarray(w_ridge, dtype=float)
    if W.shape != (X.shape[0], X.shape[0]):
        raise InputError("ridge matrix does not match the combined sample")
    return W @ kern.gram(assembly.kernel_x, X, p[None, :])[:, 0]
