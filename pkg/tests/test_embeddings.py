import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from _oracles import one_hot, primal_cmo
from condmmd import kernels as kern
from condmmd.embeddings import (
    ConditionalMeanEmbedding,
    PairedDataset,
    _fold_assignment,
    cv_loss_from_grams,
    cme_weight_matrix,
    cme_weights,
    fit_cmo,
    fit_cmo_primal,
    pooled_covariance_gram,
    select_lambda_cv,
)
from condmmd.exceptions import DegenerateDataError, InputError

DELTA = kern.KroneckerDelta()


def delta_data(seed, n=12, dx=4, dy=3):
    rng = np.random.default_rng(seed)
    return PairedDataset(rng.integers(0, dx, n).astype(float), rng.integers(0, dy, n).astype(float))


class TestPairedDataset:
    def test_lengths_must_match(self):
        with pytest.raises(InputError):
            PairedDataset(np.zeros(3), np.zeros(2))

    def test_non_finite(self):
        with pytest.raises(InputError):
            PairedDataset([0.0, np.nan], [1.0, 2.0])

    def test_empty(self):
        with pytest.raises(InputError):
            PairedDataset(np.zeros((0, 1)), np.zeros((0, 1)))

    def test_read_only(self):
        d = PairedDataset([1.0, 2.0], [3.0, 4.0])
        with pytest.raises(ValueError):
            d.covariates[0, 0] = 5.0


class TestFitCmo:
    def test_scalar(self):
        m = fit_cmo(PairedDataset([0.0], [1.0]), DELTA, DELTA, 1.0)
        np.testing.assert_allclose(m.weights, [[0.5]])

    def test_huge_lambda(self):
        d = delta_data(0)
        m = fit_cmo(d, DELTA, DELTA, 1e6)
        np.testing.assert_allclose(m.weights, np.eye(d.n) / (1e6 * d.n), atol=1e-5 / (1e6 * d.n))
        assert np.abs(cme_weight_matrix(m, d.covariates)).max() < 1e-6

    def test_inverse_identity(self):
        d = delta_data(1)
        m = fit_cmo(d, DELTA, DELTA, 0.3)
        K = kern.gram(DELTA, d.covariates)
        np.testing.assert_allclose(m.weights @ (K + 0.3 * d.n * np.eye(d.n)), np.eye(d.n), atol=1e-8)

    def test_dual_matches_primal_one_hot(self):
        d = delta_data(2, n=15)
        m = fit_cmo(d, DELTA, DELTA, 0.2)
        C = primal_cmo(one_hot(d.covariates, 4), one_hot(d.outcomes, 3), 0.2)
        queries = np.arange(4.0)
        dual = (one_hot(d.outcomes, 3).T @ cme_weight_matrix(m, queries)).T
        np.testing.assert_allclose(dual, one_hot(queries, 4) @ C.T, atol=1e-8)

    def test_degenerate_median(self):
        with pytest.raises(DegenerateDataError):
            fit_cmo(PairedDataset([1.0, 1.0], [0.0, 1.0]), kern.Gaussian(), DELTA, 0.1)


class TestCmeWeights:
    def test_scalar_formula(self):
        k = kern.Gaussian(1.0)
        m = fit_cmo(PairedDataset([0.3], [1.0]), k, k, 0.2)
        beta = cme_weights(m, [1.1])
        expected = kern.eval_kernel(k, [0.3], [1.1]) / (1.0 + 0.2)
        np.testing.assert_allclose(beta, [expected])

    def test_interpolation_limit(self):
        m = fit_cmo(PairedDataset([0.3], [1.0]), kern.Gaussian(1.0), DELTA, 1e-12)
        np.testing.assert_allclose(cme_weights(m, [0.3]), [1.0], atol=1e-10)

    def test_norm_matches_explicit_features(self):
        d = delta_data(3, n=20)
        m = fit_cmo(d, kern.Gaussian(0.7), DELTA, 0.1)
        beta = cme_weights(m, [1.5])
        L = kern.gram(DELTA, d.outcomes)
        explicit = one_hot(d.outcomes, 3).T @ beta
        assert beta @ L @ beta == pytest.approx(explicit @ explicit, abs=1e-10)

    def test_dimension_mismatch(self):
        m = fit_cmo(delta_data(0), DELTA, DELTA, 0.1)
        with pytest.raises(InputError):
            cme_weights(m, [1.0, 2.0])

    def test_delta_locality(self):
        d = PairedDataset([0.0, 1.0, 2.0, 3.0], [0.0, 1.0, 0.0, 1.0])
        m = fit_cmo(d, DELTA, DELTA, 0.1)
        beta = cme_weights(m, [2.0])
        assert beta[2] > 0
        np.testing.assert_array_equal(np.delete(beta, 2), 0.0)


class TestPrimal:
    def test_zero_outcomes(self):
        m = fit_cmo_primal(np.random.default_rng(0).normal(size=(5, 3)), np.zeros((5, 2)), 0.1)
        np.testing.assert_array_equal(m.weight_matrix, 0.0)

    def test_huge_lambda(self):
        rng = np.random.default_rng(1)
        m = fit_cmo_primal(rng.normal(size=(5, 3)), rng.normal(size=(5, 2)), 1e9)
        assert np.abs(m.weight_matrix).max() < 1e-8

    def test_feature_dimension_check(self):
        m = fit_cmo_primal(np.eye(3), np.eye(3), 0.1)
        with pytest.raises(InputError):
            m.apply(np.ones((2, 4)))

    def test_embed_uses_feature_map(self):
        m = fit_cmo_primal(one_hot([0, 1, 1], 2), one_hot([1, 0, 1], 2), 0.1,
                           feature_x=lambda X: one_hot(X, 2))
        np.testing.assert_allclose(m.embed([1.0]), m.apply(one_hot([1], 2)))


class TestPooledCovariance:
    def test_default_uniform(self):
        _, w = pooled_covariance_gram(np.zeros(2), np.ones(2))
        np.testing.assert_allclose(w, 0.25)

    def test_alpha_one(self):
        _, w = pooled_covariance_gram(np.zeros(2), np.ones(3), alpha=1.0)
        np.testing.assert_allclose(w, [0.5, 0.5, 0, 0, 0])

    def test_alpha_general(self):
        X, w = pooled_covariance_gram(np.zeros(2), np.ones(3), alpha=0.3)
        np.testing.assert_allclose(w, [0.15, 0.15, 0.7 / 3, 0.7 / 3, 0.7 / 3])
        assert X.shape == (5, 1)

    def test_empty_side_allowed_at_boundary(self):
        X, w = pooled_covariance_gram(np.zeros((2, 1)), np.zeros((0, 1)), alpha=1.0)
        np.testing.assert_allclose(w, [0.5, 0.5])

    def test_bad_alpha(self):
        with pytest.raises(InputError):
            pooled_covariance_gram(np.zeros(2), np.ones(2), alpha=1.5)


def _hand_cv_loss(x, y, lam, folds):
    """Held-out squared error of linear-kernel ridge, solved per fold explicitly."""
    loss = 0.0
    for test in folds:
        train = np.setdiff1d(np.arange(x.size), test)
        xt, yt = x[train], y[train]
        K = np.outer(xt, xt)
        beta = np.linalg.solve(K + lam * xt.size * np.eye(xt.size), np.outer(xt, x[test]))
        pred = yt @ beta
        loss += np.sum((y[test] - pred) ** 2)
    return loss / x.size


class TestSelectLambda:
    def test_single_element(self):
        d = delta_data(0)
        assert select_lambda_cv(d, DELTA, DELTA, grid=[0.37]) == 0.37

    def test_noiseless_linear(self):
        x = np.linspace(-1, 1, 20)
        d = PairedDataset(x, x)
        folds = _fold_assignment(20, 5, 0)
        hand = {lam: _hand_cv_loss(x, x, lam, folds) for lam in (1e-6, 1.0)}
        assert hand[1e-6] < hand[1.0]
        K = np.outer(x, x)
        losses = cv_loss_from_grams(K, K, [1e-6, 1.0], folds=5, seed=0)
        np.testing.assert_allclose(losses, [hand[1e-6], hand[1.0]], rtol=1e-8, atol=1e-12)
        lin = kern.Linear()
        assert select_lambda_cv(d, lin, lin, grid=[1e-6, 1.0], folds=5, seed=0) == 1e-6

    def test_deterministic(self):
        d = delta_data(4, n=30)
        a = select_lambda_cv(d, DELTA, DELTA, folds=5, seed=11)
        b = select_lambda_cv(d, DELTA, DELTA, folds=5, seed=11)
        assert a == b

    def test_folds_exceed_n(self):
        with pytest.raises(InputError):
            select_lambda_cv(delta_data(0, n=3), DELTA, DELTA, folds=5)

    def test_ties_prefer_larger(self):
        # outcomes identical: every lambda has zero loss for the delta outcome kernel
        d = PairedDataset(np.arange(6.0), np.zeros(6))
        lam = select_lambda_cv(d, DELTA, kern.Linear(), grid=[0.1, 1.0, 10.0], folds=3)
        assert lam == 10.0


class TestEstimatorApi:
    def test_fit_predict_linear_outcome(self):
        rng = np.random.default_rng(5)
        X = rng.uniform(-1, 1, size=(60, 1))
        Y = 2 * X[:, 0] + 0.01 * rng.normal(size=60)
        est = ConditionalMeanEmbedding(kernel_x="linear", kernel_y="linear", lam=1e-6).fit(X, Y)
        np.testing.assert_allclose(est.predict([[0.5]]), [1.0], atol=0.02)
        assert est.score(X, Y) > -1e-3

    def test_cv(self):
        d = delta_data(6, n=30)
        est = ConditionalMeanEmbedding(kernel_x="delta", kernel_y="delta", lam="cv").fit(
            d.covariates, d.outcomes
        )
        assert est.lambda_ in est.lambda_grid

    def test_params_round_trip(self):
        est = ConditionalMeanEmbedding(lam=0.3, cv_folds=4)
        assert clone(est).get_params() == est.get_params()

    def test_weights_rows(self):
        d = delta_data(7)
        est = ConditionalMeanEmbedding("delta", "delta").fit(d.covariates, d.outcomes)
        assert est.weights([0.0, 1.0, 2.0]).shape == (3, d.n)
        assert est.evaluate([0.0], [0.0, 1.0]).shape == (1, 2)

    def test_not_fitted(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            ConditionalMeanEmbedding().predict([[0.0]])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-3, 5))
def test_dual_primal_equivalence(seed, lam):
    rng = np.random.default_rng(seed)
    n, d, p = 10, 3, 2
    Fx, Fy = rng.normal(size=(n, d)), rng.normal(size=(n, p))
    primal = fit_cmo_primal(Fx, Fy, lam)
    dual = fit_cmo(PairedDataset(Fx, Fy), kern.Linear(), kern.Linear(), lam)
    Q = rng.normal(size=(4, d))
    np.testing.assert_allclose(
        (Fy.T @ cme_weight_matrix(dual, Q)).T, primal.apply(Q), atol=1e-8
    )


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_embedding_norm_nonnegative(seed):
    d = delta_data(seed, n=10)
    m = fit_cmo(d, kern.Gaussian(1.0), kern.Gaussian(1.0), 0.05)
    B = cme_weight_matrix(m, np.linspace(-1, 5, 7))
    L = kern.gram(m.kernel_y, d.outcomes)
    assert np.all(np.einsum("ik,ij,jk->k", B, L, B) >= -1e-12)
