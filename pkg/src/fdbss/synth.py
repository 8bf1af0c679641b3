"""Synthetic convolutive mixtures with known ground truth."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.signal import fftconvolve, lfilter

from .beamforming import ArrayGeometry
from .exceptions import ConfigError, DataError
from .signal_core import TimeSignal

__all__ = [
    "RoomMixSpec",
    "RIR_MODELS",
    "fractional_delay_filter",
    "farfield_bulk_delay",
    "generate_rirs",
    "speech_like_sources",
    "mix",
    "make_fixture",
]

RIR_MODELS = ("random_exponential_decay", "delay_plus_echoes", "anechoic_farfield")
FD_TAPS = 64
_KAISER_BETA = 8.0


@dataclass
class RoomMixSpec:
    n_sources: int = 3
    n_mics: int = 3
    rir_length: int = 256
    rir_model: str = "random_exponential_decay"
    decay_time: float = 32.0
    seed: int = 0
    geometry: Optional[ArrayGeometry] = None
    source_angles: Optional[Sequence[float]] = None
    sample_rate: float = 16000.0
    n_echoes: int = 6
    noise_snr_db: Optional[float] = None
    duration: float = 10.0

    def __post_init__(self):
        if self.rir_model not in RIR_MODELS:
            raise ConfigError(f"unknown rir_model {self.rir_model!r}; expected one of {RIR_MODELS}")
        if self.n_sources < 1 or self.n_mics < 1:
            raise ConfigError("n_sources and n_mics must be >= 1")
        if self.rir_length < 1:
            raise ConfigError("rir_length must be >= 1")
        if self.decay_time <= 0:
            raise ConfigError("decay_time must be > 0")
        if self.source_angles is not None:
            self.source_angles = [float(a) for a in self.source_angles]
            if len(self.source_angles) != self.n_sources:
                raise ConfigError("need one source angle per source")
            if any(abs(a) > 90 for a in self.source_angles):
                raise ConfigError("source angles must lie in [-90, 90]")
        if self.geometry is not None and self.geometry.n_sensors != self.n_mics:
            raise ConfigError(
                f"geometry has {self.geometry.n_sensors} sensors but n_mics={self.n_mics}")
        if self.rir_model == "anechoic_farfield" and (
                self.geometry is None or self.source_angles is None):
            raise ConfigError("anechoic_farfield requires geometry and source_angles")


def fractional_delay_filter(delay: float, length: int, n_taps: int = FD_TAPS) -> np.ndarray:
    """Kaiser-windowed sinc delaying by ``delay`` samples (may be fractional).

    The ``n_taps`` nonzero taps are centred on ``delay``; the filter must fit
    inside ``length`` taps.
    """
    half = n_taps / 2
    if delay - half < -1 or delay + half > length:
        raise ConfigError(f"delay {delay:.2f} with {n_taps} taps does not fit in {length} taps")
    n = np.arange(length)
    x = n - delay
    inside = np.abs(x) < half
    win = np.zeros(length)
    win[inside] = np.i0(_KAISER_BETA * np.sqrt(1 - (x[inside] / half) ** 2)) / np.i0(_KAISER_BETA)
    return np.sinc(x) * win


def farfield_bulk_delay(spec: RoomMixSpec, n_taps: int = FD_TAPS) -> float:
    """Common delay (samples) added so every far-field delay is causal."""
    tau = spec.geometry.delays(np.asarray(spec.source_angles)) * spec.sample_rate
    return n_taps / 2 + np.ceil(np.max(np.abs(tau)))


def _farfield_delays(spec):
    # (source, mic) delays in samples relative to the reference sensor
    return spec.geometry.delays(np.asarray(spec.source_angles)) * spec.sample_rate


def generate_rirs(spec: RoomMixSpec) -> np.ndarray:
    """FIR mixing filters ``a[mic, source, tap]``, deterministic per seed.

    * ``random_exponential_decay``: unit leading tap followed by Gaussian taps
      with amplitude envelope ``exp(-n / decay_time)``.
    * ``delay_plus_echoes``: direct path (far-field delay when geometry and
      angles are given, else a random delay) plus ``n_echoes`` attenuated
      reflections.
    * ``anechoic_farfield``: pure fractional delays ``tau_m(theta_j)`` on top
      of a common bulk delay.
    """
    rng = np.random.default_rng(spec.seed)
    M, N, L = spec.n_mics, spec.n_sources, spec.rir_length
    rirs = np.zeros((M, N, L))
    if spec.rir_model == "random_exponential_decay":
        n = np.arange(1, L)
        rirs[:, :, 0] = 1.0
        rirs[:, :, 1:] = rng.standard_normal((M, N, L - 1)) * np.exp(-n / spec.decay_time)
        return rirs

    if spec.rir_model == "anechoic_farfield":
        bulk = farfield_bulk_delay(spec)
        tau = _farfield_delays(spec)
        for j in range(N):
            for m in range(M):
                rirs[m, j] = fractional_delay_filter(bulk + tau[j, m], L)
        return rirs

    # delay_plus_echoes
    if spec.geometry is not None and spec.source_angles is not None:
        bulk = farfield_bulk_delay(spec)
        direct = bulk + _farfield_delays(spec).T                     # (mic, source)
        fractional = True
    else:
        direct = rng.integers(0, max(1, L // 8), size=(M, N)).astype(float)
        fractional = False
    for m in range(M):
        for j in range(N):
            d = direct[m, j]
            if fractional:
                rirs[m, j] = fractional_delay_filter(d, L)
            else:
                rirs[m, j, int(d)] = 1.0
            lo = int(np.ceil(d)) + 1
            if lo >= L:
                continue
            delays = rng.integers(lo, L, size=spec.n_echoes)
            gains = rng.uniform(0.1, 0.6, size=spec.n_echoes) * rng.choice([-1, 1], spec.n_echoes)
            gains *= np.exp(-(delays - d) / spec.decay_time)
            np.add.at(rirs[m, j], delays, gains)
    return rirs


def speech_like_sources(n_sources: int, n_samples: int, sample_rate: float,
                        seed: int = 0) -> np.ndarray:
    """Bursty, spectrally tilted noise with independent on/off envelopes.

    Each source alternates random 80-400 ms segments of activity (Gamma
    distributed loudness) and near-silence, so sources have distinct
    temporal envelopes and heavy-tailed time-frequency coefficients.
    Returns ``(n_sources, n_samples)`` at unit RMS.
    """
    rng = np.random.default_rng(seed)
    out = np.zeros((n_sources, n_samples))
    smooth = max(1, int(0.01 * sample_rate))
    for j in range(n_sources):
        env = np.empty(n_samples)
        pos = 0
        while pos < n_samples:
            seg = int(rng.uniform(0.08, 0.4) * sample_rate)
            level = rng.gamma(2.0, 0.5) if rng.random() < 0.55 else 0.02
            env[pos:pos + seg] = level
            pos += seg
        env = np.convolve(env, np.ones(smooth) / smooth, mode="same")
        pole = rng.uniform(0.7, 0.95)
        r, w0 = rng.uniform(0.8, 0.95), rng.uniform(0.05, 0.5) * np.pi
        carrier = lfilter([1.0], [1.0, -pole], rng.standard_normal(n_samples))
        carrier = lfilter([1.0], [1.0, -2 * r * np.cos(w0), r * r], carrier) * 0.3 + carrier
        sig = carrier * env
        out[j] = sig / np.sqrt(np.mean(sig ** 2))
    return out


def mix(sources: TimeSignal, rirs: np.ndarray, noise_snr_db: Optional[float] = None,
        seed: int = 0) -> TimeSignal:
    """``x_i = sum_j a_ij * s_j`` (linear convolution) trimmed to the source length.

    With ``noise_snr_db`` white noise is added to every microphone at that
    SNR relative to the mixture power of the channel.
    """
    rirs = np.asarray(rirs, dtype=float)
    if rirs.ndim == 2:
        rirs = rirs[:, :, np.newaxis]
    M, N, _ = rirs.shape
    if sources.channels != N:
        raise DataError(f"{sources.channels} sources but rirs expect {N}")
    T = sources.samples_per_channel
    x = np.zeros((M, T))
    for i in range(M):
        for j in range(N):
            if rirs.shape[2] == 1:
                x[i] += rirs[i, j, 0] * sources.data[j]
            else:
                x[i] += fftconvolve(sources.data[j], rirs[i, j])[:T]
    if noise_snr_db is not None:
        rng = np.random.default_rng([seed, 7919])
        power = np.mean(x ** 2, axis=1, keepdims=True)
        x = x + rng.standard_normal(x.shape) * np.sqrt(power * 10 ** (-noise_snr_db / 10))
    return TimeSignal(x, sources.sample_rate)


@dataclass
class Fixture:
    mixture: TimeSignal
    sources: TimeSignal
    rirs: np.ndarray
    spec: RoomMixSpec = field(repr=False)


def make_fixture(spec: RoomMixSpec) -> Fixture:
    """Speech-like sources mixed through :func:`generate_rirs` filters."""
    n = int(round(spec.duration * spec.sample_rate))
    src = TimeSignal(speech_like_sources(spec.n_sources, n, spec.sample_rate, spec.seed),
                     spec.sample_rate)
    rirs = generate_rirs(spec)
    return Fixture(mix(src, rirs, spec.noise_snr_db, spec.seed), src, rirs, spec)
