import math

import numpy as np
import pytest
import scipy.special as sps
from hypothesis import given, settings
from hypothesis import strategies as st

from ricci2d.spectral import SphereTransform, normalized_legendre


def _scipy_ylm(l, m, theta, phi):
    """Independent orthonormal harmonic from scipy (complex, with Condon-Shortley phase)."""
    if hasattr(sps, "sph_harm_y"):
        return sps.sph_harm_y(l, m, theta, phi)
    return sps.sph_harm(m, l, phi, theta)


def _random_band(tr: SphereTransform, rng) -> np.ndarray:
    a = rng.normal(size=(tr.L + 1, tr.L + 1)) + 1j * rng.normal(size=(tr.L + 1, tr.L + 1))
    a[:, 0] = a[:, 0].real
    return np.tril(a)


def test_legendre_orthonormal_under_gauss_quadrature():
    L = 10
    x, w = np.polynomial.legendre.leggauss(L + 1)
    P = normalized_legendre(L, x)
    for m in range(L + 1):
        G = (P[m, m:] * w) @ P[m, m:].T
        assert np.allclose(G, np.eye(L + 1 - m), atol=1e-12)


def test_synthesis_matches_scipy_harmonics():
    tr = SphereTransform(6)
    th, ph = np.meshgrid(tr.theta, tr.phi, indexing="ij")
    for l, m in [(0, 0), (1, 0), (1, 1), (3, 2), (6, 5)]:
        a = np.zeros((tr.L + 1, tr.L + 1), dtype=complex)
        a[l, m] = 1.0
        F = tr.synthesis(a)
        Y = _scipy_ylm(l, m, th, ph)
        ref = Y.real if m == 0 else 2 * Y.real
        # phase conventions differ by (-1)^m
        assert np.allclose(np.abs(F), np.abs(ref), atol=1e-12)
        assert np.allclose(F * (-1) ** m, ref, atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1), st.sampled_from([4, 9, 16]))
def test_round_trip_on_band(seed, L):
    tr = SphereTransform(L)
    a = _random_band(tr, np.random.default_rng(seed))
    assert np.allclose(tr.analysis(tr.synthesis(a)), a, atol=1e-12)


def test_laplacian_eigenvalues():
    tr = SphereTransform(16)
    z = tr.unit_vectors[..., 2]
    x = tr.unit_vectors[..., 0]
    assert np.allclose(tr.laplacian(z), -2 * z, atol=1e-11)
    Y2 = x * z
    assert np.allclose(tr.laplacian(Y2), -6 * Y2, atol=1e-11)


@settings(max_examples=15, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_inverse_laplacian_round_trip(seed):
    tr = SphereTransform(12)
    a = _random_band(tr, np.random.default_rng(seed))
    a[0, 0] = 0.0
    F = tr.synthesis(a)
    assert np.allclose(tr.inverse_laplacian(tr.laplacian(F)), F, atol=1e-12)
    assert abs(tr.mean(tr.inverse_laplacian(F + 3.0))) < 1e-13


def test_weights_and_dense_laplacian():
    tr = SphereTransform(6)
    assert tr.weights.sum() == pytest.approx(4 * math.pi, rel=1e-14)
    F = np.random.default_rng(1).normal(size=tr.shape)
    assert np.allclose(tr.laplacian_matrix @ F.ravel(), tr.laplacian(F).ravel(), atol=1e-10)
    assert tr.real_basis().shape == (tr.nlat * tr.nlon, (tr.L + 1) ** 2)


def test_band_limit_validation():
    with pytest.raises(ValueError):
        SphereTransform(0)
