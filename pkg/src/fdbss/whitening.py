"""Per-bin prewhitening and symmetric orthogonalization."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import DataError, DegenerateBinError

__all__ = [
    "WhiteningTransform",
    "compute_whitener",
    "whiten_bins",
    "symmetric_orthogonalize",
    "DEGENERACY_RATIO",
]

# smallest/largest covariance eigenvalue ratio below which a bin is degenerate
DEGENERACY_RATIO = 1e-12


@dataclass
class WhiteningTransform:
    """Whitener ``V`` (N x M), dewhitener ``V_inv`` (M x N) and channel mean."""

    V: np.ndarray
    V_inv: np.ndarray
    mean: np.ndarray
    bin: Optional[int] = None

    def apply(self, X: np.ndarray) -> np.ndarray:
        return self.V @ (X - self.mean[:, np.newaxis])


def _covariance(Xc: np.ndarray) -> np.ndarray:
    T = Xc.shape[-1]
    return Xc @ np.swapaxes(Xc, -1, -2).conj() / T


def compute_whitener(X_bin: np.ndarray, bin: Optional[int] = None) -> WhiteningTransform:
    """PCA whitener of one frequency bin ``X_bin[channel, frame]``.

    Raises
    ------
    DataError
        If there are fewer frames than channels.
    DegenerateBinError
        If the sample covariance is (numerically) rank deficient.
    """
    X_bin = np.asarray(X_bin)
    M, T = X_bin.shape
    if T < M:
        raise DataError(f"whitening needs at least {M} frames, got {T}")
    mean = X_bin.mean(axis=1)
    cov = _covariance(X_bin - mean[:, np.newaxis])
    eigval, eigvec = np.linalg.eigh(cov)
    if eigval[-1] <= 0 or eigval[0] < DEGENERACY_RATIO * eigval[-1]:
        raise DegenerateBinError(
            f"rank-deficient covariance in bin {bin} (eigenvalues {eigval[0]:.3e}..{eigval[-1]:.3e})",
            bin_index=bin,
        )
    scale = np.sqrt(eigval)
    V = eigvec.conj().T / scale[:, np.newaxis]
    V_inv = eigvec * scale[np.newaxis, :]
    return WhiteningTransform(V, V_inv, mean, bin)


def whiten_bins(X: np.ndarray):
    """Vectorized whitening of every bin of ``X[bin, channel, frame]``.

    Returns ``(Z, V, degenerate)`` where ``Z[bin]`` is the centred, whitened
    data, ``V[bin]`` the whitener and ``degenerate`` a boolean mask of bins
    whose covariance is rank deficient.  Degenerate bins get ``V = I`` and
    their ``Z`` is the centred raw data.
    """
    F, M, T = X.shape
    if T < M:
        raise DataError(f"whitening needs at least {M} frames, got {T}")
    Xc = X - X.mean(axis=2, keepdims=True)
    eigval, eigvec = np.linalg.eigh(_covariance(Xc))
    degenerate = (eigval[:, -1] <= 0) | (eigval[:, 0] < DEGENERACY_RATIO * eigval[:, -1])
    eigval = np.where(degenerate[:, np.newaxis], 1.0, eigval)
    V = np.swapaxes(eigvec, -1, -2).conj() / np.sqrt(eigval)[:, :, np.newaxis]
    V[degenerate] = np.eye(M)
    return V @ Xc, V, degenerate


def symmetric_orthogonalize(W: np.ndarray) -> np.ndarray:
    """Closest unitary matrix ``W (W^H W)^{-1/2}``; broadcasts over leading axes.

    Raises
    ------
    DataError
        If ``W`` is singular.
    """
    W = np.asarray(W)
    gram = np.swapaxes(W, -1, -2).conj() @ W
    eigval, eigvec = np.linalg.eigh(gram)
    if np.any(eigval[..., 0] <= 1e-14 * np.maximum(eigval[..., -1], 1e-300)):
        raise DataError("symmetric orthogonalization of a singular matrix")
    inv_sqrt = (eigvec / np.sqrt(eigval)[..., np.newaxis, :]) @ np.swapaxes(eigvec, -1, -2).conj()
    return W @ inv_sqrt
