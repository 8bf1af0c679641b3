"""Scale-ambiguity correction by projection back to the microphones.

For bin ``f`` with mixture-domain unmixing ``B_f`` the image of source ``j``
is ``B_f^{-1} E_j B_f X(f, .)``, where ``E_j`` keeps only component ``j``.
The images of all sources add up to the mixture, and any per-row complex
scaling of ``B_f`` cancels out.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["SourceImageSet", "map_to_microphone_domain", "projectors", "safe_inverse"]


@dataclass
class SourceImageSet:
    """``images[source, mic, bin, frame]`` plus bins that fell back to identity."""

    images: np.ndarray
    fallback_bins: np.ndarray

    @property
    def n_sources(self) -> int:
        return self.images.shape[0]

    @property
    def n_mics(self) -> int:
        return self.images.shape[1]

    def reference(self, mic: int = 0) -> np.ndarray:
        """Per-source spectra observed at ``mic``: ``[source, bin, frame]``."""
        return self.images[:, mic]


def safe_inverse(B: np.ndarray, rcond: float = 1e-12):
    """Batch inverse of ``B[bin]``; singular bins become (I, I).

    Returns ``(B_used, B_inv, fallback_mask)``.
    """
    B = np.array(B, dtype=complex)
    n = B.shape[-1]
    sv = np.linalg.svd(B, compute_uv=False)
    bad = ~np.all(np.isfinite(B), axis=(-2, -1))
    bad |= sv[..., -1] <= rcond * np.maximum(sv[..., 0], 1e-300)
    B[bad] = np.eye(n)
    return B, np.linalg.inv(B), bad


def projectors(B: np.ndarray) -> np.ndarray:
    """``P_j = B^{-1} E_j B`` for each source, shape ``(..., N, N, N)``."""
    Binv = np.linalg.inv(B)
    return np.einsum("...mj,...jn->...jmn", Binv, B)


def map_to_microphone_domain(X: np.ndarray, B: np.ndarray) -> SourceImageSet:
    """Source images of ``X[mic, bin, frame]`` under unmixing ``B[bin]`` (N x M).

    Singular or non-finite ``B_f`` are replaced by the identity and listed in
    ``fallback_bins``.
    """
    B_used, Binv, bad = safe_inverse(B)
    U = np.einsum("fnm,mft->nft", B_used, X)
    images = np.einsum("fmn,nft->nmft", Binv, U)
    return SourceImageSet(images, np.flatnonzero(bad))
