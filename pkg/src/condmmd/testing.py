"""Bootstrap two-sample tests for conditional distributions.

Two resampling schemes are provided:

* ``pooled`` -- for equal covariate marginals. Each replicate draws ``n``
  points without replacement from the pooled sample for ``P``; the rest form
  ``Q``.
* ``propensity`` -- for differing marginals. Each pooled point is assigned to
  ``P`` independently with probability ``e(x)``.

Replicate ``b`` draws from its own stream ``numpy.random.default_rng([seed, b])``
(``[seed, b, attempt]`` for redraws), so results do not depend on the order or
the number of workers. Kernel bandwidths and ridge parameters are resolved
once on the observed split and frozen across replicates.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cmmd import CmmdConfig, PooledCmmd, resolve_config
from .doubly_robust import PropensityModel, cmmd_dr_from_datasets
from .embeddings import PairedDataset
from .exceptions import CMMDError, DegeneratePropensityError, InputError

__all__ = [
    "ALGORITHMS",
    "MAX_REDRAWS",
    "TestConfig",
    "TestResult",
    "p_value",
    "pooled_split",
    "propensity_split",
    "pooled_bootstrap_test",
    "propensity_bootstrap_test",
    "run_test",
]

ALGORITHMS = ("pooled", "propensity")
MAX_REDRAWS = 100


@dataclass(frozen=True)
class TestConfig:
    __test__ = False  # keep pytest from collecting this class

    statistic: CmmdConfig = field(default_factory=CmmdConfig)
    significance: float = 0.05
    n_bootstrap: int = 200
    seed: int = 0
    algorithm: str = "pooled"
    propensity: Optional[PropensityModel] = None
    n_jobs: int = 1

    def __post_init__(self):
        if not 0.0 < float(self.significance) < 1.0:
            raise InputError(f"significance must lie in (0, 1), got {self.significance!r}")
        if int(self.n_bootstrap) != self.n_bootstrap or self.n_bootstrap < 1:
            raise InputError(f"n_bootstrap must be a positive integer, got {self.n_bootstrap!r}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise InputError(f"seed must be a non-negative integer, got {self.seed!r}")
        if self.algorithm not in ALGORITHMS:
            raise InputError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.algorithm == "propensity" and self.propensity is None:
            raise InputError("the propensity algorithm needs a propensity model")
        if self.statistic.estimator == "doubly_robust" and self.propensity is None:
            raise InputError("the doubly robust statistic needs a propensity model")
        if int(self.n_jobs) < 1:
            raise InputError(f"n_jobs must be >= 1, got {self.n_jobs!r}")


@dataclass(frozen=True)
class TestResult:
    __test__ = False

    statistic: float
    bootstrap_statistics: np.ndarray
    p_value: float
    reject: bool
    seed: int
    significance: float
    algorithm: str
    config: CmmdConfig
    splits: Optional[list] = field(default=None, repr=False, compare=False)

    @property
    def n_bootstrap(self):
        return self.bootstrap_statistics.size

    def to_dict(self):
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "reject": self.reject,
            "significance": self.significance,
            "algorithm": self.algorithm,
            "B": self.n_bootstrap,
            "seed": self.seed,
            "bootstrap_statistics": [float(v) for v in self.bootstrap_statistics],
            "statistic_config": self.config.to_dict(),
        }


def p_value(S, boots):
    """``(1 + #{b : S_b > S}) / (1 + B)``; ties do not count as exceedances."""
    boots = np.asarray(boots, dtype=float).reshape(-1)
    if boots.size == 0:
        raise InputError("need at least one bootstrap statistic")
    return float((1 + np.count_nonzero(boots > S)) / (1 + boots.size))


def pooled_split(seed, b, n, N):
    """Indices of ``D_P`` and ``D_Q`` for pooled replicate ``b``."""
    perm = np.random.default_rng([seed, b]).permutation(N)
    return np.sort(perm[:n]), np.sort(perm[n:])


def propensity_split(seed, b, e):
    """Bernoulli(``e``) assignment for propensity replicate ``b``.

    Draws giving an empty side are redrawn from ``[seed, b, attempt]``.
    """
    e = np.asarray(e, dtype=float)
    for attempt in range(MAX_REDRAWS + 1):
        key = [seed, b] if attempt == 0 else [seed, b, attempt]
        t = np.random.default_rng(key).random(e.size) < e
        k = int(t.sum())
        if 0 < k < e.size:
            return np.flatnonzero(t), np.flatnonzero(~t)
    raise DegeneratePropensityError(
        f"{MAX_REDRAWS} consecutive redraws left one side empty"
    )


class _Statistic:
    """Statistic as a function of a split of the pooled sample."""

    def __init__(self, dataP, dataQ, cfg, propensity):
        self.pooled = PairedDataset.concat(dataP, dataQ)
        self.n = dataP.n
        self.propensity = propensity
        if cfg.estimator == "doubly_robust":
            first = cmmd_dr_from_datasets(dataP, dataQ, propensity, cfg)
            self.cfg = first.config
            self.observed = first.value
            self._pooled = None
        else:
            self.cfg = resolve_config(dataP, dataQ, cfg)
            self._pooled = PooledCmmd(self.pooled, self.cfg)
            self.observed = self._pooled(np.arange(self.n), np.arange(self.n, self.pooled.n))

    def __call__(self, p_idx, q_idx):
        if self._pooled is not None:
            return self._pooled(p_idx, q_idx)
        est = cmmd_dr_from_datasets(
            self.pooled.subset(p_idx), self.pooled.subset(q_idx), self.propensity, self.cfg
        )
        return est.value


def _run(dataP, dataQ, cfg, splitter, keep_splits):
    stat = _Statistic(dataP, dataQ, cfg.statistic, cfg.propensity)

    def replicate(b):
        try:
            p_idx, q_idx = splitter(b)
            return b, stat(p_idx, q_idx), (p_idx if keep_splits else None)
        except CMMDError as exc:
            raise type(exc)(f"replicate {b}: {exc}") from exc

    B = int(cfg.n_bootstrap)
    boots = np.empty(B)
    splits = [None] * B if keep_splits else None
    if cfg.n_jobs == 1:
        results = map(replicate, range(B))
    else:
        pool = ThreadPoolExecutor(max_workers=int(cfg.n_jobs))
        results = pool.map(replicate, range(B))
    try:
        for b, value, p_idx in results:
            boots[b] = value
            if keep_splits:
                splits[b] = p_idx
    finally:
        if cfg.n_jobs != 1:
            pool.shutdown()
    p = p_value(stat.observed, boots)
    return TestResult(
        statistic=float(stat.observed),
        bootstrap_statistics=boots,
        p_value=p,
        reject=bool(p < cfg.significance),
        seed=int(cfg.seed),
        significance=float(cfg.significance),
        algorithm=cfg.algorithm,
        config=stat.cfg,
        splits=splits,
    )


def pooled_bootstrap_test(dataP, dataQ, cfg, keep_splits=False):
    """Exchangeable resampling test, valid when ``P_X = Q_X``."""
    if cfg.algorithm != "pooled":
        raise InputError("pooled_bootstrap_test needs algorithm='pooled'")
    n, N = dataP.n, dataP.n + dataQ.n
    return _run(dataP, dataQ, cfg, lambda b: pooled_split(cfg.seed, b, n, N), keep_splits)


def propensity_bootstrap_test(dataP, dataQ, cfg, keep_splits=False):
    """Conditional resampling test driven by the known propensity ``e(x)``."""
    if cfg.algorithm != "propensity":
        raise InputError("propensity_bootstrap_test needs algorithm='propensity'")
    X = np.vstack([dataP.covariates, dataQ.covariates])
    e = cfg.propensity(X)
    return _run(dataP, dataQ, cfg, lambda b: propensity_split(cfg.seed, b, e), keep_splits)


def run_test(dataP, dataQ, cfg, keep_splits=False):
    if cfg.algorithm == "pooled":
        return pooled_bootstrap_test(dataP, dataQ, cfg, keep_splits)
    return propensity_bootstrap_test(dataP, dataQ, cfg, keep_splits)
