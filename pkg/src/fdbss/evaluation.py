"""Separation metrics: BSS_EVAL-style SDR/SIR/SAR and the Amari index."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import linalg
from scipy.fft import irfft, next_fast_len, rfft

from .exceptions import ConfigError, DataError

__all__ = ["SeparationScores", "Decomposition", "bss_eval", "bss_eval_pairs",
           "decompose", "amari_index", "MAX_DB"]

MAX_DB = 120.0


@dataclass
class Decomposition:
    """``estimate = target + interference + artifact`` (zero-padded length)."""

    target: np.ndarray
    interference: np.ndarray
    artifact: np.ndarray


@dataclass
class SeparationScores:
    """Scores of each estimate against the reference it was paired with.

    ``pairing[k]`` is the reference index assigned to estimate ``k``; the
    arrays are indexed by estimate.
    """

    sdr: np.ndarray
    sir: np.ndarray
    sar: np.ndarray
    pairing: np.ndarray
    allowed_filter_len: int
    sir_matrix: Optional[np.ndarray] = field(default=None, repr=False)

    def as_rows(self) -> List[dict]:
        return [{"estimate": k, "reference": int(self.pairing[k]), "sdr_db": float(self.sdr[k]),
                 "sir_db": float(self.sir[k]), "sar_db": float(self.sar[k])}
                for k in range(len(self.sdr))]


def _ratio_db(num, den):
    num, den = float(num), float(den)
    if num <= 0:
        return -MAX_DB
    if den <= num * 10 ** (-MAX_DB / 10):
        return MAX_DB
    return float(np.clip(10 * np.log10(num / den), -MAX_DB, MAX_DB))


class _Projector:
    """Least-squares projections onto delayed copies of the references.

    The Gram matrix of all ``N * L`` delayed copies is assembled from FFT
    cross-correlations and factored once.
    """

    def __init__(self, refs: np.ndarray, L: int):
        self.refs = refs
        self.N, self.T = refs.shape
        self.L = L
        self.nfft = next_fast_len(self.T + L - 1)
        self.R = rfft(refs, self.nfft)
        corr = irfft(self.R[:, None].conj() * self.R[None], self.nfft)   # r_ij(k)
        lags = np.arange(L)
        # G[(i,a),(j,b)] = sum_t s_i(t-a) s_j(t-b) = r_ij(a-b)
        diff = (lags[:, None] - lags[None]) % self.nfft
        G = corr[:, :, diff]                                              # i, j, a, b
        G = G.transpose(0, 2, 1, 3).reshape(self.N * L, self.N * L)
        self.G = (G + G.T) / 2
        self._full = self._factor(self.G)
        self._blocks = [self._factor(self.G[j * L:(j + 1) * L, j * L:(j + 1) * L])
                        for j in range(self.N)]

    @staticmethod
    def _factor(G):
        try:
            return ("cho", linalg.cho_factor(G, lower=True, check_finite=False))
        except linalg.LinAlgError:
            return ("lstsq", G)

    @staticmethod
    def _solve(fac, D):
        kind, data = fac
        if kind == "cho":
            return linalg.cho_solve(data, D, check_finite=False)
        return linalg.lstsq(data, D)[0]

    def correlations(self, est: np.ndarray) -> np.ndarray:
        """``D[(i, a)] = sum_t s_i(t - a) e(t)``."""
        E = rfft(est, self.nfft)
        c = irfft(self.R.conj() * E, self.nfft)[:, :self.L]
        return c.reshape(-1)

    def synthesize(self, coef: np.ndarray, which) -> np.ndarray:
        n = self.T + self.L - 1
        C = rfft(coef.reshape(len(which), self.L), self.nfft)
        return irfft(np.sum(C * self.R[which], axis=0), self.nfft)[:n]

    def decompose(self, est: np.ndarray, j: int) -> Decomposition:
        L = self.L
        D = self.correlations(est)
        target = self.synthesize(self._solve(self._blocks[j], D[j * L:(j + 1) * L]), [j])
        full = self.synthesize(self._solve(self._full, D), list(range(self.N)))
        padded = np.concatenate([est, np.zeros(L - 1)])
        return Decomposition(target, full - target, padded - full)


def _check(estimates, references, filter_len):
    est = np.atleast_2d(np.asarray(getattr(estimates, "data", estimates), dtype=float))
    ref = np.atleast_2d(np.asarray(getattr(references, "data", references), dtype=float))
    if filter_len < 1:
        raise ConfigError("filter_len must be >= 1")
    T = min(est.shape[1], ref.shape[1])
    est, ref = est[:, :T], ref[:, :T]
    if not (np.all(np.isfinite(est)) and np.all(np.isfinite(ref))):
        raise DataError("signals must be finite")
    energy = np.sum(ref ** 2, axis=1)
    if np.any(energy <= 0):
        raise DataError(f"reference {int(np.argmin(energy))} has zero energy")
    return est, ref


def _scores(dec: Decomposition):
    t = np.sum(dec.target ** 2)
    i = np.sum(dec.interference ** 2)
    a = np.sum(dec.artifact ** 2)
    sdr = _ratio_db(t, np.sum((dec.interference + dec.artifact) ** 2))
    sir = _ratio_db(t, i)
    sar = _ratio_db(np.sum((dec.target + dec.interference) ** 2), a)
    return sdr, sir, sar


def decompose(estimate, references, target: int, filter_len: int = 512) -> Decomposition:
    """Split one estimate into target, interference and artifact parts."""
    est, ref = _check(estimate, references, filter_len)
    return _Projector(ref, filter_len).decompose(est[0], target)


def bss_eval_pairs(estimates, references, filter_len: int = 512):
    """SDR/SIR/SAR of every estimate against every reference.

    Returns three ``(n_estimates, n_references)`` arrays in dB.
    """
    est, ref = _check(estimates, references, filter_len)
    proj = _Projector(ref, filter_len)
    out = np.zeros((3, est.shape[0], ref.shape[0]))
    for k in range(est.shape[0]):
        for j in range(ref.shape[0]):
            out[:, k, j] = _scores(proj.decompose(est[k], j))
    return out[0], out[1], out[2]


def bss_eval(estimates, references, filter_len: int = 512) -> SeparationScores:
    """Score estimates against references, pairing them by best total SIR.

    Parameters
    ----------
    estimates, references : array_like or TimeSignal, shape (n, samples)
        Equal counts; lengths are trimmed to the shorter one.
    filter_len : int
        Length of the time-invariant distortion filter allowed on the
        target (512 by default).
    """
    est, ref = _check(estimates, references, filter_len)
    if est.shape[0] != ref.shape[0]:
        raise DataError(f"{est.shape[0]} estimates but {ref.shape[0]} references")
    sdr, sir, sar = bss_eval_pairs(est, ref, filter_len)
    n = est.shape[0]
    best, best_score = None, -np.inf
    for perm in itertools.permutations(range(n)):
        score = sir[np.arange(n), perm].sum()
        if score > best_score:
            best, best_score = perm, score
    idx = np.arange(n), np.array(best)
    return SeparationScores(sdr[idx], sir[idx], sar[idx], np.array(best), filter_len, sir)


def amari_index(G) -> float:
    """Amari index of a gain matrix ``G = W A``, normalized to [0, 1].

    Zero exactly when ``G`` is a scaled permutation matrix.
    """
    A = np.abs(np.asarray(G))
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigError("amari_index needs a square matrix")
    if not np.all(np.isfinite(A)):
        raise DataError("gain matrix must be finite")
    n = A.shape[0]
    if n < 2:
        return 0.0
    rows = np.sum(A / A.max(axis=1, keepdims=True), axis=1) - 1
    cols = np.sum(A / A.max(axis=0, keepdims=True), axis=0) - 1
    return float((rows.sum() + cols.sum()) / (2 * n * (n - 1)))
