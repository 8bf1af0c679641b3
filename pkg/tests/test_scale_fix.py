import numpy as np
from hypothesis import given, strategies as st

from fdbss.scale_fix import map_to_microphone_domain, projectors, safe_inverse

from conftest import crandn


def test_identity_unmixing_selects_channels(rng):
    X = crandn(rng, 3, 5, 7)
    imgs = map_to_microphone_domain(X, np.tile(np.eye(3), (5, 1, 1))).images
    for j in range(3):
        expected = np.zeros_like(X)
        expected[j] = X[j]
        assert np.allclose(imgs[j], expected)


def test_images_sum_to_mixture(rng):
    X = crandn(rng, 3, 6, 50)
    imgs = map_to_microphone_domain(X, crandn(rng, 6, 3, 3))
    assert np.max(np.abs(imgs.images.sum(axis=0) - X)) < 1e-8
    assert imgs.fallback_bins.size == 0
    assert imgs.reference(1).shape == (3, 6, 50)


def test_singular_bins_fall_back_to_identity(rng):
    B = crandn(rng, 4, 2, 2)
    B[2] = [[1, 2], [2, 4]]
    B[3, 0, 0] = np.inf
    used, inv, bad = safe_inverse(B)
    assert bad.tolist() == [False, False, True, True]
    assert np.allclose(used[2], np.eye(2))
    X = crandn(rng, 2, 4, 10)
    res = map_to_microphone_domain(X, B)
    assert res.fallback_bins.tolist() == [2, 3]
    assert np.all(np.isfinite(res.images))


@given(st.integers(2, 6), st.integers(0, 2 ** 32 - 1))
def test_projector_identities(n, seed):
    rng = np.random.default_rng(seed)
    B = crandn(rng, n, n) + np.eye(n)
    P = projectors(B)
    assert np.allclose(P.sum(axis=0), np.eye(n), atol=1e-8)
    for j in range(n):
        assert np.allclose(P[j] @ P[j], P[j], atol=1e-8)


@given(st.integers(0, 2 ** 32 - 1))
def test_row_scaling_invariance(seed):
    rng = np.random.default_rng(seed)
    X = crandn(rng, 3, 4, 20)
    B = crandn(rng, 4, 3, 3) + np.eye(3)
    D = crandn(rng, 4, 3) + 0.5
    base = map_to_microphone_domain(X, B).images
    c = complex(*rng.standard_normal(2)) + 0.1
    assert np.allclose(map_to_microphone_domain(X, c * B).images, base, atol=1e-8)
    assert np.allclose(map_to_microphone_domain(X, D[..., None] * B).images, base, atol=1e-7)


@given(st.permutations(range(4)), st.integers(0, 2 ** 32 - 1))
def test_row_permutation_permutes_images(perm, seed):
    rng = np.random.default_rng(seed)
    X = crandn(rng, 4, 3, 15)
    B = crandn(rng, 3, 4, 4) + np.eye(4)
    Pm = np.eye(4)[list(perm)]
    base = map_to_microphone_domain(X, B).images
    moved = map_to_microphone_domain(X, Pm @ B).images
    assert np.allclose(moved, base[list(perm)], atol=1e-8)
