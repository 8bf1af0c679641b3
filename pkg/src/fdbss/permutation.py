"""Permutation alignment across frequency bins by likelihood ratio jumps.

Each bin's separated components are relabelled so that their magnitudes
follow the time envelope ``beta_j(t)`` of the source they are assigned to.
The full solver (LRJ) scores all ``N!`` relabellings of every bin; the
reduced solver (RLRJ) only scores the identity and the ``N(N-1)/2`` single
swaps, moving at most one pair per bin and iteration.

A permutation state is an integer array ``perms[bin, ic]`` giving the
source position that component ``ic`` is sent to.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .exceptions import ConfigError

__all__ = [
    "PermutationState",
    "apply_permutations",
    "estimate_beta",
    "gamma_matrix",
    "permutation_score",
    "candidate_permutations",
    "lrj_pass",
    "rlrj_pass",
    "sort_permutations",
    "write_trace_csv",
    "MAX_LRJ_SOURCES",
]

BETA_FLOOR = 1e-12
GAMMA_FLOOR = 1e-12
MAX_LRJ_SOURCES = 8
CONVENTIONS = ("literal", "laplacian")


@dataclass
class PermutationState:
    perms: np.ndarray
    changed: List[np.ndarray] = field(default_factory=list)
    comparisons: List[int] = field(default_factory=list)

    @classmethod
    def identity(cls, n_bins: int, n_sources: int) -> "PermutationState":
        return cls(np.tile(np.arange(n_sources), (n_bins, 1)))

    @property
    def n_bins(self) -> int:
        return self.perms.shape[0]

    @property
    def n_sources(self) -> int:
        return self.perms.shape[1]

    @property
    def comparison_counter(self) -> int:
        """Total number of permutation scores evaluated so far."""
        return int(sum(self.comparisons))

    def copy(self) -> "PermutationState":
        return PermutationState(self.perms.copy(), list(self.changed), list(self.comparisons))

    def is_valid(self) -> bool:
        return bool(np.all(np.sort(self.perms, axis=1) == np.arange(self.n_sources)))


def apply_permutations(U: np.ndarray, perms: np.ndarray) -> np.ndarray:
    """Relabel ``U[ic, bin, ...]`` so that ``out[perms[f, i], f] = U[i, f]``."""
    inv = np.argsort(perms, axis=1)
    idx = inv.T.reshape(inv.shape[1], inv.shape[0], *([1] * (U.ndim - 2)))
    return np.take_along_axis(U, idx, axis=0)


def estimate_beta(U: np.ndarray, state: Optional[PermutationState] = None) -> np.ndarray:
    """Time envelopes ``beta_j(t) = mean_f |u_j(f, t)|`` under ``state``.

    ``U`` is ``[source, bin, frame]`` (complex or magnitudes); values are
    floored at ``1e-12`` so silent frames stay finite.
    """
    mag = np.abs(U)
    if state is not None:
        mag = apply_permutations(mag, state.perms)
    return np.maximum(mag.mean(axis=1), BETA_FLOOR)


def gamma_matrix(mag: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """``gamma[f, i, j] = mean_t |u_i(f, t)| / beta_j(t)``."""
    T = mag.shape[-1]
    gamma = np.einsum("ift,jt->fij", mag, 1.0 / beta) / T
    return np.maximum(gamma, GAMMA_FLOOR)


def _scores(gamma: np.ndarray, cands: np.ndarray, convention: str) -> np.ndarray:
    """Scores of every candidate for every bin, shape ``(bins, candidates)``."""
    n = cands.shape[1]
    picked = gamma[:, np.arange(n)[np.newaxis, :], cands]
    if convention == "literal":
        return -np.log(picked).sum(axis=-1)
    if convention == "laplacian":
        return -picked.sum(axis=-1)
    raise ConfigError(f"unknown scoring convention {convention!r}; expected {CONVENTIONS}")


def permutation_score(gamma: np.ndarray, perm, convention: str = "literal") -> float:
    """Likelihood of sending component ``i`` to position ``perm[i]``.

    ``-sum_i log gamma[i, perm[i]]``, larger is more probable.  With
    ``convention="laplacian"`` the score is ``-sum_i gamma[i, perm[i]]``.
    """
    gamma = np.asarray(gamma, dtype=float)
    return float(_scores(gamma[np.newaxis], np.asarray(perm)[np.newaxis], convention)[0, 0])


def candidate_permutations(n_sources: int, method: str) -> np.ndarray:
    """Candidate relabellings, identity first.

    ``lrj``: all ``N!`` permutations; ``rlrj``: identity plus every single
    transposition, ``N(N-1)/2 + 1`` candidates.
    """
    ident = np.arange(n_sources)
    if method == "lrj":
        if n_sources > MAX_LRJ_SOURCES:
            raise ConfigError(
                f"full LRJ over {n_sources}! permutations refused (limit {MAX_LRJ_SOURCES} sources)"
            )
        return np.array(list(itertools.permutations(range(n_sources))), dtype=int).reshape(
            -1, n_sources)
    if method == "rlrj":
        cands = [ident]
        for i, j in itertools.combinations(range(n_sources), 2):
            swap = ident.copy()
            swap[i], swap[j] = j, i
            cands.append(swap)
        return np.array(cands, dtype=int)
    raise ConfigError(f"unknown permutation method {method!r}")


def _pass(U, beta, state, method, convention):
    cands = candidate_permutations(state.n_sources, method)
    mag = apply_permutations(np.abs(U), state.perms)
    gamma = gamma_matrix(mag, beta)
    scores = _scores(gamma, cands, convention)
    # argmax returns the first maximum, and the identity comes first: ties keep the state
    best = np.argmax(scores, axis=1)
    chosen = cands[best]
    new = state.copy()
    new.perms = np.take_along_axis(chosen, state.perms, axis=1)
    new.changed.append(best != 0)
    new.comparisons.append(len(cands) * state.n_bins)
    return new


def lrj_pass(U, beta, state: Optional[PermutationState] = None, convention: str = "literal"):
    """One full likelihood-ratio-jump pass over every bin (``N!`` candidates)."""
    if state is None:
        state = PermutationState.identity(U.shape[1], U.shape[0])
    return _pass(U, beta, state, "lrj", convention)


def rlrj_pass(U, beta, state: Optional[PermutationState] = None, convention: str = "literal"):
    """One reduced pass: identity or a single swap per bin."""
    if state is None:
        state = PermutationState.identity(U.shape[1], U.shape[0])
    return _pass(U, beta, state, "rlrj", convention)


def sort_permutations(U: np.ndarray, method: str = "rlrj", iterations: int = 9,
                      initial_state: Optional[PermutationState] = None,
                      convention: str = "literal"):
    """Iterate envelope estimation and per-bin passes.

    Parameters
    ----------
    U : ndarray, shape (n_sources, n_bins, n_frames)
        Separated components of every bin.
    method : {"lrj", "rlrj"}
    iterations : int
        Number of passes; each pass re-estimates ``beta`` once from the
        current state before scoring all bins.
    initial_state : PermutationState, optional
        Starting labels, e.g. from DOA alignment.

    Returns
    -------
    U_sorted : ndarray
        ``U`` relabelled by the final state.
    state : PermutationState
    trace : list of dict
        ``{"iteration", "changed_bins", "method"}`` per pass.
    """
    if iterations < 1:
        raise ConfigError("iterations must be >= 1")
    if method not in ("lrj", "rlrj"):
        raise ConfigError(f"unknown permutation method {method!r}")
    N, F, _ = U.shape
    state = (initial_state.copy() if initial_state is not None
             else PermutationState.identity(F, N))
    if state.perms.shape != (F, N):
        raise ConfigError("initial_state shape does not match U")
    trace = []
    for it in range(1, iterations + 1):
        beta = estimate_beta(U, state)
        state = _pass(U, beta, state, method, convention)
        trace.append({"iteration": it, "changed_bins": int(state.changed[-1].sum()),
                      "method": method})
    return apply_permutations(U, state.perms), state, trace


def write_trace_csv(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["iteration", "changed_bins", "method"])
        writer.writeheader()
        writer.writerows(trace)


def expected_candidates(n_sources: int, method: str) -> int:
    if method == "lrj":
        return math.factorial(n_sources)
    return n_sources * (n_sources - 1) // 2 + 1
