"""Spherical harmonic transforms on a Gauss-Legendre x uniform-longitude grid.

Fields are real arrays of shape ``(nlat, nlon)``.  Coefficients are complex
arrays ``a[l, m]`` for ``0 <= m <= l <= L`` with respect to orthonormal
harmonics, so that ``F = sum a[l, m] Y_lm + conj`` for ``m > 0``.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np


def normalized_legendre(L: int, x: np.ndarray) -> np.ndarray:
    """Table ``P[m, l, j]`` of associated Legendre functions at ``x[j]``.

    Normalized so that ``int_{-1}^{1} P[m, l]**2 dx = 1``; the Condon-Shortley
    phase is dropped.  Entries with ``l < m`` are zero.
    """
    x = np.asarray(x, dtype=float)
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    P = np.zeros((L + 1, L + 1, x.size))
    pmm = np.full(x.size, np.sqrt(0.5))
    for m in range(L + 1):
        if m > 0:
            pmm = pmm * s * np.sqrt((2 * m + 1) / (2 * m))
        P[m, m] = pmm
        if m < L:
            P[m, m + 1] = np.sqrt(2 * m + 3) * x * pmm
        for l in range(m + 2, L + 1):
            a = np.sqrt((4 * l * l - 1) / (l * l - m * m))
            b = np.sqrt(((l - 1) ** 2 - m * m) / (4 * (l - 1) ** 2 - 1))
            P[m, l] = a * (x * P[m, l - 1] - b * P[m, l - 2])
    return P


class SphereTransform:
    """Forward/backward transforms for band limit ``L``.

    ``nlat = L + 1`` Gauss nodes and ``nlon = 2L + 2`` longitudes integrate
    harmonics of degree ``<= 2L + 1`` exactly.
    """

    def __init__(self, L: int):
        if L < 1:
            raise ValueError("band limit must be >= 1")
        self.L = L
        self.nlat = L + 1
        self.nlon = 2 * L + 2
        x, w = np.polynomial.legendre.leggauss(self.nlat)
        # north to south
        self.cos_theta = x[::-1].copy()
        self.gauss_weights = w[::-1].copy()
        self.theta = np.arccos(self.cos_theta)
        self.phi = 2.0 * np.pi * np.arange(self.nlon) / self.nlon
        self.P = normalized_legendre(L, self.cos_theta)
        ell = np.arange(L + 1)
        self.eigenvalues = -(ell * (ell + 1.0))
        self._mask = np.tril(np.ones((L + 1, L + 1), dtype=bool))

    @cached_property
    def weights(self) -> np.ndarray:
        """Quadrature weights on the grid; they sum to 4*pi."""
        return np.outer(self.gauss_weights, np.full(self.nlon, 2.0 * np.pi / self.nlon))

    @cached_property
    def unit_vectors(self) -> np.ndarray:
        st = np.sin(self.theta)[:, None]
        return np.stack(
            [
                st * np.cos(self.phi)[None, :],
                st * np.sin(self.phi)[None, :],
                np.broadcast_to(self.cos_theta[:, None], (self.nlat, self.nlon)),
            ],
            axis=-1,
        )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nlat, self.nlon)

    @cached_property
    def _PT(self) -> np.ndarray:
        return np.ascontiguousarray(self.P.transpose(0, 2, 1))

    def analysis(self, F: np.ndarray) -> np.ndarray:
        c = np.fft.rfft(F, axis=1)[:, : self.L + 1] * (self.gauss_weights[:, None] / self.nlon)
        # a[l, m] = sqrt(2 pi) sum_j w_j P[m, l, j] c[j, m], batched over m
        ri = np.stack([c.real.T, c.imag.T], axis=-1)
        out = np.matmul(self.P, ri)
        a = np.sqrt(2.0 * np.pi) * (out[..., 0] + 1j * out[..., 1]).T
        a[~self._mask] = 0.0
        return a

    def synthesis(self, a: np.ndarray) -> np.ndarray:
        ri = np.stack([a.real.T, a.imag.T], axis=-1)
        out = np.matmul(self._PT, ri) / np.sqrt(2.0 * np.pi)
        full = np.zeros((self.nlat, self.nlon // 2 + 1), dtype=complex)
        full[:, : self.L + 1] = (out[..., 0] + 1j * out[..., 1]).T
        return np.fft.irfft(full * self.nlon, n=self.nlon, axis=1)

    def project(self, F: np.ndarray) -> np.ndarray:
        return self.synthesis(self.analysis(F))

    def laplacian(self, F: np.ndarray) -> np.ndarray:
        return self.synthesis(self.eigenvalues[:, None] * self.analysis(F))

    def inverse_laplacian(self, F: np.ndarray) -> np.ndarray:
        """Mean-zero ``w`` with ``lap w = F - mean(F)``."""
        a = self.analysis(F)
        a[0] = 0.0
        a[1:] /= self.eigenvalues[1:, None]
        return self.synthesis(a)

    def integrate(self, F: np.ndarray) -> float:
        return float(np.sum(self.weights * F))

    def mean(self, F: np.ndarray) -> float:
        return self.integrate(F) / (4.0 * np.pi)

    def real_basis(self) -> np.ndarray:
        """Orthonormal real harmonics as columns, shape ``(nlat*nlon, (L+1)**2)``.

        Column ordering is by degree; ``degrees`` gives the degree of each column.
        """
        cols = []
        for l in range(self.L + 1):
            for m in range(l + 1):
                leg = self.P[m, l][:, None] / np.sqrt(2.0 * np.pi)
                if m == 0:
                    cols.append(np.broadcast_to(leg, self.shape))
                else:
                    cols.append(np.sqrt(2.0) * leg * np.cos(m * self.phi)[None, :])
                    cols.append(np.sqrt(2.0) * leg * np.sin(m * self.phi)[None, :])
        return np.stack([c.ravel() for c in cols], axis=1)

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.concatenate([np.full(2 * l + 1, l) for l in range(self.L + 1)])

    @cached_property
    def laplacian_matrix(self) -> np.ndarray:
        """Dense grid-space Laplacian ``Y diag(-l(l+1)) Y^T W``."""
        Y = self.real_basis()
        lam = -(self.degrees * (self.degrees + 1.0))
        return (Y * lam) @ (Y.T * self.weights.ravel())
