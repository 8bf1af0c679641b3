"""Time-domain containers and the STFT/ISTFT analysis-synthesis pair.

The STFT turns the convolutive mixture into one instantaneous mixture per
frequency bin.  Only the ``fft_size // 2 + 1`` non-negative frequencies are
stored; synthesis restores the negative half by conjugate symmetry.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.signal import get_window

from .exceptions import ConfigError, DataError

__all__ = [
    "TimeSignal",
    "StftConfig",
    "Spectrogram",
    "stft",
    "istft",
    "analysis_window",
]

_WINDOWS = ("hann",)


@dataclass
class TimeSignal:
    """Real multichannel signal stored as ``data[channel, sample]``."""

    data: np.ndarray
    sample_rate: float

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim == 1:
            data = data[np.newaxis, :]
        if data.ndim != 2:
            raise DataError(f"signal data must be 2-D (channel, sample), got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise DataError("signal contains NaN or Inf samples")
        if not self.sample_rate > 0:
            raise DataError(f"sample_rate must be positive, got {self.sample_rate}")
        self.data = data
        self.sample_rate = float(self.sample_rate)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def samples_per_channel(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        return self.samples_per_channel / self.sample_rate


def analysis_window(name: str, size: int) -> np.ndarray:
    """Periodic (DFT-even) window, the variant that overlap-adds exactly."""
    if name not in _WINDOWS:
        raise ConfigError(f"unsupported window {name!r}; expected one of {_WINDOWS}")
    return get_window(name, size, fftbins=True)


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 4096
    hop_size: Optional[int] = None
    window: str = "hann"
    sample_rate: Optional[float] = None

    def __post_init__(self):
        if self.hop_size is None:
            object.__setattr__(self, "hop_size", self.fft_size // 4)
        self.validate()

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def validate(self) -> None:
        n, hop = self.fft_size, self.hop_size
        if n < 2 or n & (n - 1):
            raise ConfigError(f"fft_size must be a power of two >= 2, got {n}")
        if hop < 1 or n % hop:
            raise ConfigError(f"hop_size {hop} must be a positive divisor of fft_size {n}")
        if self.sample_rate is not None and not self.sample_rate > 0:
            raise ConfigError("sample_rate must be positive")
        # weighted overlap-add needs sum_k w^2(n - k hop) to be constant
        wsq = analysis_window(self.window, n) ** 2
        overlap = wsq.reshape(n // hop, hop).sum(axis=0)
        if np.ptp(overlap) > 1e-10 * overlap.max():
            raise ConfigError(
                f"window {self.window!r} with hop {hop} violates the overlap-add "
                f"condition (relative ripple {np.ptp(overlap) / overlap.max():.2e})"
            )

    def frequencies(self) -> np.ndarray:
        """Bin center frequencies in Hz (requires ``sample_rate``)."""
        if self.sample_rate is None:
            raise ConfigError("sample_rate unknown; frequencies are undefined")
        return np.arange(self.n_bins) * self.sample_rate / self.fft_size


@dataclass
class Spectrogram:
    """Complex multichannel STFT stored as ``data[channel, bin, frame]``.

    ``length`` is the number of time samples of the analysed signal, used by
    :func:`istft` to trim the synthesized output.
    """

    data: np.ndarray
    config: StftConfig
    length: Optional[int] = None
    pad_front: int = field(default=0)

    def __post_init__(self):
        if self.data.ndim != 3:
            raise DataError(f"spectrogram data must be 3-D, got shape {self.data.shape}")
        if self.data.shape[1] != self.config.n_bins:
            raise DataError(
                f"spectrogram has {self.data.shape[1]} bins, config implies {self.config.n_bins}"
            )

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def bins(self) -> int:
        return self.data.shape[1]

    @property
    def frames(self) -> int:
        return self.data.shape[2]

    def frequencies(self) -> np.ndarray:
        return self.config.frequencies()

    def with_data(self, data: np.ndarray) -> "Spectrogram":
        """Same framing and config, different content (channel count may change)."""
        return Spectrogram(data, self.config, self.length, self.pad_front)


def _frame_count(n_samples: int, cfg: StftConfig) -> tuple[int, int]:
    """Frames needed so every real sample sees full window overlap."""
    pad_front = cfg.fft_size - cfg.hop_size
    needed = pad_front + n_samples + pad_front
    n_frames = max(0, -(-(needed - cfg.fft_size) // cfg.hop_size)) + 1
    return n_frames, pad_front


def stft(x: TimeSignal, cfg: StftConfig) -> Spectrogram:
    """Short-time Fourier transform of every channel of ``x``.

    The signal is zero padded by ``fft_size - hop_size`` samples at the front
    and at least as much at the tail, so the frame count obeys
    ``T = floor((padded_len - fft_size) / hop) + 1``.
    """
    if x.samples_per_channel == 0:
        raise DataError("cannot analyse an empty signal")
    if cfg.sample_rate is None:
        cfg = replace(cfg, sample_rate=x.sample_rate)
    elif cfg.sample_rate != x.sample_rate:
        raise ConfigError(
            f"config sample_rate {cfg.sample_rate} != signal sample_rate {x.sample_rate}"
        )
    n, hop = cfg.fft_size, cfg.hop_size
    n_frames, pad_front = _frame_count(x.samples_per_channel, cfg)
    padded_len = (n_frames - 1) * hop + n
    padded = np.zeros((x.channels, padded_len))
    padded[:, pad_front:pad_front + x.samples_per_channel] = x.data

    frames = np.lib.stride_tricks.sliding_window_view(padded, n, axis=1)[:, ::hop, :]
    win = analysis_window(cfg.window, n)
    spec = np.fft.rfft(frames * win, axis=-1)
    return Spectrogram(
        np.ascontiguousarray(spec.transpose(0, 2, 1)),
        cfg,
        length=x.samples_per_channel,
        pad_front=pad_front,
    )


def _overlap_add(frames: np.ndarray, hop: int) -> np.ndarray:
    """Overlap-add ``frames[..., frame, sample]`` with ``hop`` dividing the frame size."""
    *lead, n_frames, n = frames.shape
    ratio = n // hop
    blocks = np.zeros((*lead, n_frames + ratio - 1, hop), dtype=frames.dtype)
    for k in range(ratio):
        blocks[..., k:k + n_frames, :] += frames[..., k * hop:(k + 1) * hop]
    return blocks.reshape(*lead, -1)


def istft(S: Spectrogram, length: Optional[int] = None) -> TimeSignal:
    """Weighted overlap-add inverse of :func:`stft`.

    Output length before trimming is ``(T - 1) * hop + fft_size``; the front
    padding added by :func:`stft` is removed and the result is cut to
    ``length`` (default: the analysed signal length).
    """
    cfg = S.config
    if cfg.sample_rate is None:
        raise ConfigError("spectrogram config carries no sample_rate")
    if S.data.shape[1] != cfg.n_bins:
        raise ConfigError("spectrogram bin count inconsistent with its config")
    n, hop = cfg.fft_size, cfg.hop_size
    data = S.data.copy()
    data[:, 0, :] = data[:, 0, :].real
    data[:, -1, :] = data[:, -1, :].real
    frames = np.fft.irfft(data.transpose(0, 2, 1), n=n, axis=-1)
    win = analysis_window(cfg.window, n)
    out = _overlap_add(frames * win, hop)
    wsum = _overlap_add(np.broadcast_to(win ** 2, (S.frames, n)), hop)
    nonzero = wsum > 1e-10 * wsum.max()
    out[:, nonzero] /= wsum[nonzero]
    out[:, ~nonzero] = 0.0

    out = out[:, S.pad_front:]
    if length is None:
        length = S.length
    if length is not None:
        if length > out.shape[1]:
            out = np.pad(out, ((0, 0), (0, length - out.shape[1])))
        out = out[:, :length]
    return TimeSignal(out, cfg.sample_rate)
