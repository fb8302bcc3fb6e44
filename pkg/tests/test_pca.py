import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddtd.pca import DegeneratePCAWarning, PCACompressor, center


def test_center_examples():
    Xc, mean = center([[1, 1], [3, 3]])
    assert np.array_equal(Xc, [[-1, -1], [1, 1]]) and np.array_equal(mean, [2, 2])
    Xc, _ = center([[0.3, 0.7]] * 4)
    assert np.array_equal(Xc, np.zeros((4, 2)))
    Xc, mean = center([[0, 0], [2, 0]])
    assert np.array_equal(Xc, [[-1, 0], [1, 0]]) and np.array_equal(mean, [1, 0])
    with pytest.raises(ValueError):
        center([[1, 2]])


def test_center_zero_column_means(rng):
    X = rng.random((30, 50)) * 1e3
    Xc, _ = center(X)
    assert np.all(np.abs(Xc.mean(axis=0)) <= 1e-12 * np.abs(X).max(axis=0))


@pytest.mark.parametrize("route", ["svd", "gram"])
def test_fit_two_point_example(route):
    pca = PCACompressor(route=route)
    S = pca.fit_transform([[0.0, 0.0], [2.0, 0.0]])
    assert pca.n_components_ == 1
    assert np.allclose(pca.coefficients_[:, 0], [1.0, 0.0])
    assert np.allclose(S[:, 0], [-1.0, 1.0])


@pytest.mark.parametrize("route", ["svd", "gram", "auto"])
def test_roundtrip(rng, route):
    X = rng.random((40, 300))
    pca = PCACompressor(route=route)
    S = pca.fit_transform(X)
    assert pca.n_components_ <= 39
    assert np.max(np.abs(pca.restore(S) - X)) < 1e-8


def test_rank_after_centering(rng):
    X = rng.random((50, 2000))
    pca = PCACompressor().fit(X)
    assert pca.route_ == "gram"
    assert pca.n_components_ == 49


def test_model_invariants(rng):
    X = rng.random((25, 120))
    for route in ("svd", "gram"):
        pca = PCACompressor(route=route).fit(X)
        C = pca.coefficients_
        assert np.max(np.abs(C.T @ C - np.eye(C.shape[1]))) < 1e-10
        s = pca.singular_values_
        assert np.all(np.diff(s) <= 0) and np.all(s >= 0)
        assert np.all(C[np.argmax(np.abs(C), axis=0), np.arange(C.shape[1])] > 0)
        S = pca.transform(X)
        assert np.all(np.abs(S.mean(axis=0)) < 1e-8)


def test_gram_route_matches_direct_svd(rng):
    for _ in range(10):
        X = rng.random((50, 200))
        a = PCACompressor(route="gram")
        b = PCACompressor(route="svd")
        Sa, Sb = a.fit_transform(X), b.fit_transform(X)
        assert a.n_components_ == b.n_components_
        assert np.max(np.abs(a.singular_values_ - b.singular_values_)) < 1e-8
        assert np.max(np.abs(a.coefficients_ - b.coefficients_)) < 1e-8
        assert np.max(np.abs(Sa - Sb)) < 1e-8


def test_transform_examples(rng):
    X = rng.random((20, 60))
    pca = PCACompressor()
    S = pca.fit_transform(X)
    assert np.max(np.abs(pca.transform(X) - S)) < 1e-8
    assert np.allclose(pca.transform(pca.mean_[None, :]), 0.0, atol=1e-12)
    j = 3
    row = pca.mean_ + pca.coefficients_[:, j]
    expected = np.zeros(pca.n_components_)
    expected[j] = 1.0
    assert np.allclose(pca.transform(row[None, :])[0], expected, atol=1e-10)
    with pytest.raises(ValueError):
        pca.transform(rng.random((2, 59)))


def test_restore_examples(rng):
    X = rng.random((15, 40))
    pca = PCACompressor()
    S = pca.fit_transform(X)
    assert np.allclose(pca.restore(np.zeros((1, pca.n_components_)))[0], pca.mean_)
    i = 4
    assert np.allclose(pca.restore(2 * S[i:i + 1])[0], pca.mean_ + 2 * (X[i] - pca.mean_), atol=1e-10)
    with pytest.raises(ValueError):
        pca.restore(np.zeros((1, pca.n_components_ + 1)))


def test_restore_is_unclamped():
    X = np.array([[0.0, 0.0], [1.0, 1.0]])
    pca = PCACompressor()
    S = pca.fit_transform(X)
    assert np.all(pca.restore(3 * S)[1] > 1.0)


def test_restore_affine(rng):
    pca = PCACompressor().fit(rng.random((12, 30)))
    S1, S2 = rng.normal(size=(2, 5, pca.n_components_))
    a = 0.3
    lhs = pca.restore(a * S1 + (1 - a) * S2)
    rhs = a * pca.restore(S1) + (1 - a) * pca.restore(S2)
    assert np.max(np.abs(lhs - rhs)) < 1e-8


@pytest.mark.parametrize("route", ["svd", "gram"])
def test_truncation_error_is_tail_energy(rng, route):
    X = rng.random((30, 90))
    full = PCACompressor(route=route).fit(X)
    for k in (1, 5, 17):
        pca = PCACompressor(n_components=k, route=route).fit(X)
        tail = np.sum(full.singular_values_[k:] ** 2)
        assert pca.reconstruction_error(X) == pytest.approx(tail, rel=1e-6)


def test_degenerate_input_warns():
    with pytest.warns(DegeneratePCAWarning):
        pca = PCACompressor().fit(np.ones((5, 8)))
    assert pca.n_components_ == 0 and pca.degenerate_
    assert np.allclose(pca.restore(np.zeros((2, 0))), 1.0)


def test_whitened_scores_have_unit_variance(rng):
    X = rng.random((40, 80))
    pca = PCACompressor(whiten=True)
    S = pca.fit_transform(X)
    assert np.allclose(S.std(axis=0, ddof=1), 1.0)
    assert np.max(np.abs(pca.restore(S) - X)) < 1e-8


def test_checkpoint_roundtrip(tmp_path, rng):
    X = rng.random((10, 33))
    pca = PCACompressor().fit(X)
    pca.save(tmp_path / "pca.bin")
    back = PCACompressor.load(tmp_path / "pca.bin")
    assert back.n_components_ == pca.n_components_
    assert np.array_equal(back.coefficients_, pca.coefficients_)
    assert np.array_equal(back.transform(X), pca.transform(X))
    raw = (tmp_path / "pca.bin").read_bytes()
    (tmp_path / "bad.bin").write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        PCACompressor.load(tmp_path / "bad.bin")


def test_sklearn_params():
    pca = PCACompressor(n_components=3, whiten=True)
    assert pca.get_params()["n_components"] == 3
    pca.set_params(route="svd")
    assert pca.route == "svd"


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.integers(1, 40), st.integers(0, 10_000))
def test_roundtrip_property(m, n, seed):
    X = np.random.default_rng(seed).random((m, n))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegeneratePCAWarning)
        pca = PCACompressor()
        S = pca.fit_transform(X)
    assert np.max(np.abs(pca.restore(S) - X)) < 1e-8
