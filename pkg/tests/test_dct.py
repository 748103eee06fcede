"""DCT correctness against the brute-force cosine-sum oracle."""

import numpy as np
import pytest
from conftest import dct2_bruteforce

from antipure.dct import dct2d, dct_matrix


def test_constant_patch_is_dc_only():
    c = 0.73
    coefs = dct2d(np.full((8, 8), c)).data
    assert abs(coefs[0, 0] - 8 * c) < 1e-12
    off_dc = coefs.copy()
    off_dc[0, 0] = 0.0
    assert np.max(np.abs(off_dc)) < 1e-12


def test_unit_impulse_matches_bruteforce():
    x = np.zeros((4, 4))
    x[0, 0] = 1.0
    np.testing.assert_allclose(dct2d(x).data, dct2_bruteforce(x), atol=1e-12)


@pytest.mark.parametrize("s", [2, 4, 8])
def test_random_patches_match_bruteforce(s):
    rng = np.random.default_rng(s)
    for _ in range(3):
        x = rng.standard_normal((s, s))
        np.testing.assert_allclose(dct2d(x).data, dct2_bruteforce(x), atol=1e-10)


@pytest.mark.parametrize("s", [2, 4, 8, 16])
def test_round_trip_and_parseval(s):
    rng = np.random.default_rng(100 + s)
    for _ in range(25):
        x = rng.standard_normal((s, s))
        y = dct2d(x).data
        np.testing.assert_allclose(dct2d(y, inverse=True).data, x, atol=1e-10)
        assert abs(np.sum(y * y) - np.sum(x * x)) < 1e-10


def test_basis_is_orthonormal():
    for s in (2, 4, 8, 16):
        c = dct_matrix(s)
        np.testing.assert_allclose(c @ c.T, np.eye(s), atol=1e-12)


def test_batched_matches_per_patch():
    rng = np.random.default_rng(0)
    batch = rng.standard_normal((5, 4, 4))
    out = dct2d(batch).data
    for i in range(5):
        np.testing.assert_allclose(out[i], dct2d(batch[i]).data, atol=1e-14)


@pytest.mark.parametrize("bad", [np.zeros((3, 3)), np.zeros((0, 0)), np.zeros((4, 6)), np.zeros(4)])
def test_invalid_patches_rejected(bad):
    with pytest.raises(ValueError):
        dct2d(bad)
