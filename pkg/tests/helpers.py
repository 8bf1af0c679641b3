"""Shared synthetic fixtures for the test suite."""

import numpy as np

from fdbss.permutation import apply_permutations


def disjoint_sources(seed, n_src=3, n_bins=257, n_frames=300):
    """Separated-spectrogram magnitudes with mutually exclusive activity.

    Frames are handed out in random-length segments; the owning source is
    loud, every other source sits near a small floor.
    """
    rng = np.random.default_rng(seed)
    env = np.full((n_src, n_frames), 0.03)
    t, last = 0, -1
    while t < n_frames:
        seg = int(rng.integers(5, 25))
        owner = int(rng.choice([j for j in range(n_src) if j != last]))
        env[owner, t:t + seg] = rng.uniform(0.5, 2.0)
        last, t = owner, t + seg
    spectral = rng.uniform(0.2, 1.0, size=(n_src, n_bins, 1))
    mag = np.abs(rng.standard_normal((n_src, n_bins, n_frames))) + 0.3
    phase = np.exp(2j * np.pi * rng.random((n_src, n_bins, n_frames)))
    return env[:, np.newaxis, :] * spectral * mag * phase


def scramble(U, seed, fraction=0.4):
    """Permute a ``fraction`` of bins by random non-identity permutations."""
    rng = np.random.default_rng([seed, 99])
    N, F, _ = U.shape
    perms = np.tile(np.arange(N), (F, 1))
    chosen = rng.choice(F, size=int(round(fraction * F)), replace=False)
    for f in chosen:
        p = np.arange(N)
        while np.array_equal(p, np.arange(N)):
            p = rng.permutation(N)
        perms[f] = p
    return apply_permutations(U, perms), perms


def bin_agreement(scramble_perms, final_perms):
    """Share of bins agreeing with the majority global relabelling."""
    composed = np.take_along_axis(final_perms, scramble_perms, axis=1)
    rows, counts = np.unique(composed, axis=0, return_counts=True)
    return counts.max() / composed.shape[0]
