"""Seeded synthetic scenarios, discrete toy tables and named propensities.

All draws come from ``numpy.random.Generator`` over the PCG64 bit generator
(``numpy.random.default_rng(seed)``): normals use numpy's ziggurat sampler,
Beta variates the ratio of two gamma draws. Within one call the order is
fixed: covariates of ``P``, noise of ``P``, covariates of ``Q``, noise of
``Q``. The same seed therefore reproduces the same datasets bit for bit.

Outcome formulas live in :data:`CONDITIONALS`; null-hypothesis variants reuse
the ``P`` entry rather than a copy of it.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .cmmd import DiscreteConditionalModel
from .doubly_robust import PropensityModel
from .embeddings import PairedDataset
from .exceptions import InputError

__all__ = [
    "CONDITIONALS",
    "SCENARIOS",
    "NOISE_SCALE",
    "DR_CMMD1_TRUTH",
    "ScenarioConfig",
    "sample_conditional",
    "gen_sine_vs_linear",
    "gen_multidim",
    "gen_beta_settings",
    "gen_dr_scenario",
    "analytic_propensity_dr",
    "named_propensity",
    "PROPENSITIES",
    "toy_tables",
]

NOISE_SCALE = 0.5


def _sine(x, theta=None):
    return np.exp(-0.5 * x**2) * np.sin(2 * x)


def _identity(x, theta=None):
    return x


def _sin_pi(x, theta=None):
    return np.sin(np.pi * x)


def _beta_setting1(x, theta):
    return (1 - theta) * np.sin(np.pi * x) + theta * (3 * x - 0.5)


def _beta_setting2(x, theta):
    return (1 - theta) * np.sin(np.pi * x) + 0.5 * theta


def _cos_quad(x, theta=None):
    return np.cos(4 * np.pi * x) + 0.5 * x**2


def _cos(x, theta=None):
    return np.cos(4 * np.pi * x)


CONDITIONALS = {
    "sine": _sine,
    "linear": _identity,
    "sin_pi": _sin_pi,
    "beta_setting1": _beta_setting1,
    "beta_setting2": _beta_setting2,
    "cos_quadratic": _cos_quad,
    "cos": _cos,
}

# E[X^4] is 1/5 under Unif(0,1) and (0.5*1.5*2.5*3.5)/(1*2*3*4) under
# Beta(0.5, 0.5); the conditional means differ by 0.5 x^2, so with a linear
# outcome kernel CMMD_1^2 = 0.25 * E_mix[X^4] for the equal-weight mixture.
DR_CMMD1_TRUTH = 0.25 * 0.5 * (1 / 5 + (0.5 * 1.5 * 2.5 * 3.5) / (1 * 2 * 3 * 4))


def _check_n(n, name="n"):
    if int(n) != n or n < 1:
        raise InputError(f"{name} must be a positive integer, got {n!r}")
    return int(n)


def _outcomes(name, X, rng, scale=NOISE_SCALE, theta=None):
    f = CONDITIONALS[name]
    return f(X, theta) + scale * rng.standard_normal(X.shape)


def sample_conditional(name, X, seed, noise_scale=NOISE_SCALE, theta=None):
    """Draw outcomes from conditional ``name`` at fixed covariates ``X``."""
    if name not in CONDITIONALS:
        raise InputError(f"unknown conditional {name!r}")
    X = np.asarray(X, dtype=float)
    return _outcomes(name, X, np.random.default_rng(seed), noise_scale, theta)


def _pair(rng, draw_x, cond_p, cond_q, n, m, scale=NOISE_SCALE, theta=None):
    Xp = draw_x(rng, n)
    Yp = _outcomes(cond_p, Xp, rng, scale, theta)
    Xq = draw_x(rng, m)
    Zq = _outcomes(cond_q, Xq, rng, scale, theta)
    return PairedDataset(Xp, Yp), PairedDataset(Xq, Zq)


def gen_sine_vs_linear(theta, n, seed, null=False, m=None):
    """``X ~ N(theta, 3/4)``; ``Y|X`` sine-damped, ``Z|X`` linear, noise ``0.5 N(0,1)``.

    With ``null=True`` the second sample also uses the sine conditional.
    """
    n = _check_n(n)
    m = n if m is None else _check_n(m, "m")
    theta = float(theta)
    sd = np.sqrt(0.75)

    def draw_x(rng, k):
        return theta + sd * rng.standard_normal((k, 1))

    return _pair(
        np.random.default_rng(seed), draw_x, "sine", "sine" if null else "linear", n, m
    )


def multidim_noise_scales(D):
    """Per-coordinate noise scales ``0.45 + 0.05 d`` for ``d = 1..D``."""
    return 0.45 + 0.05 * np.arange(1, D + 1)


def gen_multidim(D, n, seed, null=False, m=None):
    """``D`` independent copies of the sine/linear pair with growing noise."""
    D = _check_n(D, "D")
    n = _check_n(n)
    m = n if m is None else _check_n(m, "m")
    sd = np.sqrt(0.75)
    scales = multidim_noise_scales(D)

    def draw_x(rng, k):
        return 0.5 + sd * rng.standard_normal((k, D))

    return _pair(
        np.random.default_rng(seed), draw_x, "sine", "sine" if null else "linear", n, m, scales
    )


def gen_beta_settings(setting, theta, n, seed, m=None):
    """``X ~ Beta(4, 4)``; ``Y|X = sin(pi X) + eps``, ``Z|X`` per setting.

    ``theta = 0`` makes both conditionals coincide.
    """
    if setting not in (1, 2):
        raise InputError(f"setting must be 1 or 2, got {setting!r}")
    theta = float(theta)
    if not 0.0 <= theta <= 1.0:
        raise InputError(f"theta must lie in [0, 1], got {theta!r}")
    n = _check_n(n)
    m = n if m is None else _check_n(m, "m")

    def draw_x(rng, k):
        return rng.beta(4.0, 4.0, size=(k, 1))

    rng = np.random.default_rng(seed)
    Xp = draw_x(rng, n)
    Yp = _outcomes("sin_pi", Xp, rng)
    Xq = draw_x(rng, m)
    Zq = _outcomes(f"beta_setting{setting}", Xq, rng, theta=theta)
    return PairedDataset(Xp, Yp), PairedDataset(Xq, Zq)


def gen_dr_scenario(n, seed, null_hypothesis=False, m=None):
    """``X ~ Unif(0,1)`` for ``P`` and ``X' ~ Beta(0.5, 0.5)`` for ``Q``.

    ``Y|X = cos(4 pi X) + 0.5 X^2 + eps`` and ``Z|X' = cos(4 pi X') + eps``;
    under the null both use the first formula.
    """
    n = _check_n(n)
    m = n if m is None else _check_n(m, "m")
    rng = np.random.default_rng(seed)
    Xp = rng.random((n, 1))
    Yp = _outcomes("cos_quadratic", Xp, rng)
    Xq = rng.beta(0.5, 0.5, size=(m, 1))
    Zq = _outcomes("cos_quadratic" if null_hypothesis else "cos", Xq, rng)
    return PairedDataset(Xp, Yp), PairedDataset(Xq, Zq)


def analytic_propensity_dr(x, form="density"):
    """``P(T=1 | x)`` for an equal mixture of ``Unif(0,1)`` and ``Beta(0.5, 0.5)``.

    ``form="density"`` gives ``1 / (1 + x^{-1/2} (1-x)^{-1/2} / pi)``, the
    ratio of the two densities. ``form="printed"`` flips the exponents to
    ``+1/2``; it is kept only to reproduce results obtained with that variant.

    Raises
    ------
    InputError
        If any ``x`` lies outside the open interval ``(0, 1)``.
    """
    x = np.asarray(x, dtype=float)
    if np.any(~((x > 0.0) & (x < 1.0))):
        raise InputError("propensity is only defined for x strictly inside (0, 1)")
    if form == "density":
        ratio = 1.0 / (np.pi * np.sqrt(x * (1.0 - x)))
    elif form == "printed":
        ratio = np.sqrt(x * (1.0 - x)) / np.pi
    else:
        raise InputError(f"unknown propensity form {form!r}")
    return 1.0 / (1.0 + ratio)


def _dr_density(X):
    return analytic_propensity_dr(np.asarray(X)[:, 0], "density")


def _dr_printed(X):
    return analytic_propensity_dr(np.asarray(X)[:, 0], "printed")


PROPENSITIES = {
    "uniform_vs_beta_half": _dr_density,
    "uniform_vs_beta_half_printed": _dr_printed,
}


def named_propensity(name):
    if name not in PROPENSITIES:
        raise InputError(f"unknown propensity {name!r}; known: {sorted(PROPENSITIES)}")
    return PropensityModel.analytic(PROPENSITIES[name], name=name)


def toy_tables():
    """Three-state discrete example: reference model and candidates ``Q1..Q3``.

    Tables are indexed ``[y, x]``; all models share the covariate marginal.
    """
    mu = np.array([0.3, 0.6, 0.1])
    P = DiscreteConditionalModel(np.array([[0.4, 0.5, 0.6], [0.6, 0.5, 0.4]]), mu)
    candidates = (
        DiscreteConditionalModel(np.array([[0.4, 0.5, 0.9], [0.6, 0.5, 0.1]]), mu),
        DiscreteConditionalModel(np.array([[0.3, 0.4, 0.5], [0.7, 0.6, 0.5]]), mu),
        DiscreteConditionalModel(np.array([[0.3, 0.5, 0.8], [0.7, 0.5, 0.2]]), mu),
    )
    return P, candidates


SCENARIOS = ("sine_vs_linear", "multidim", "beta1", "beta2", "dr")


@dataclass(frozen=True)
class ScenarioConfig:
    """Named scenario with its parameter.

    ``theta`` applies to ``sine_vs_linear`` (in ``[-1, 1]``) and the Beta
    settings (in ``[0, 1]``); ``dim`` to ``multidim``; ``null`` selects the
    null variant where one exists (for the Beta settings use ``theta=0``).
    """

    scenario: str
    n: int = 100
    seed: int = 0
    theta: float = 0.0
    dim: int = 1
    null: bool = False
    m: int = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise InputError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        _check_n(self.n)
        if self.m is not None:
            _check_n(self.m, "m")
        if self.scenario == "sine_vs_linear" and not -1.0 <= self.theta <= 1.0:
            raise InputError(f"theta must lie in [-1, 1], got {self.theta!r}")
        if self.scenario in ("beta1", "beta2") and not 0.0 <= self.theta <= 1.0:
            raise InputError(f"theta must lie in [0, 1], got {self.theta!r}")
        if self.scenario == "multidim":
            _check_n(self.dim, "dim")

    def replace(self, **changes):
        return ScenarioConfig(**{**asdict(self), **changes})

    def to_dict(self):
        return asdict(self)

    def generate(self):
        s = self.scenario
        if s == "sine_vs_linear":
            return gen_sine_vs_linear(self.theta, self.n, self.seed, self.null, self.m)
        if s == "multidim":
            return gen_multidim(self.dim, self.n, self.seed, self.null, self.m)
        if s in ("beta1", "beta2"):
            return gen_beta_settings(int(s[-1]), self.theta, self.n, self.seed, self.m)
        return gen_dr_scenario(self.n, self.seed, self.null, self.m)

    @property
    def shared_marginal(self):
        return self.scenario != "dr"

    def default_propensity(self):
        """Exact propensity for the scenario, or ``None`` when marginals agree."""
        if self.scenario == "dr":
            return named_propensity("uniform_vs_beta_half")
        return None
