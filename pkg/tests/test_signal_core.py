import numpy as np
import pytest
from hypothesis import given, strategies as st

from fdbss.exceptions import ConfigError, DataError
from fdbss.signal_core import StftConfig, TimeSignal, analysis_window, istft, stft


def rel_rms(a, b):
    return np.sqrt(np.mean((a - b) ** 2) / np.mean(b ** 2))


def test_time_signal_validation():
    sig = TimeSignal(np.zeros(10), 8000)
    assert sig.channels == 1 and sig.samples_per_channel == 10
    assert sig.duration == pytest.approx(10 / 8000)
    with pytest.raises(DataError):
        TimeSignal(np.array([0.0, np.nan]), 8000)
    with pytest.raises(DataError):
        TimeSignal(np.zeros(4), 0)
    with pytest.raises(DataError):
        TimeSignal(np.zeros((2, 2, 2)), 8000)


@pytest.mark.parametrize("fft,hop", [(1000, 250), (1024, 1000), (1024, 512)])
def test_config_rejects_bad_framing(fft, hop):
    with pytest.raises(ConfigError):
        StftConfig(fft_size=fft, hop_size=hop)


def test_default_hop_is_quarter_frame():
    cfg = StftConfig(fft_size=4096)
    assert cfg.hop_size == 1024 and cfg.n_bins == 2049


def test_zero_signal_gives_zero_spectrogram():
    S = stft(TimeSignal(np.zeros((2, 3000)), 8000), StftConfig(256))
    assert S.channels == 2 and S.bins == 129
    assert np.all(S.data == 0)
    assert np.all(istft(S).data == 0)


def test_frame_count_formula():
    cfg = StftConfig(256, 64)
    for n in (1, 255, 256, 1000, 4097):
        S = stft(TimeSignal(np.ones(n), 8000), cfg)
        padded_len = (S.frames - 1) * 64 + 256
        assert S.frames == (padded_len - 256) // 64 + 1
        # front padding plus at least the same tail padding
        assert padded_len >= n + 2 * (256 - 64)


def test_sinusoid_energy_concentrates_around_its_bin():
    n, fs, k = 512, 16000.0, 37
    t = np.arange(20 * n) / fs
    x = np.cos(2 * np.pi * k * fs / n * t)
    S = stft(TimeSignal(x, fs), StftConfig(n))
    energy = np.abs(S.data[0, :, 4:-4]) ** 2
    share = energy[k - 1:k + 2].sum(axis=0) / energy.sum(axis=0)
    assert share.min() >= 0.95


def test_white_noise_round_trip(rng):
    x = rng.standard_normal((2, 20000))
    S = stft(TimeSignal(x, 16000), StftConfig(1024))
    y = istft(S).data
    assert y.shape == x.shape
    assert rel_rms(y, x) < 1e-6


def test_single_bin_is_local():
    cfg = StftConfig(256, 64, sample_rate=8000)
    S = stft(TimeSignal(np.zeros(4000), 8000), cfg)
    data = np.zeros_like(S.data)
    m = 20
    data[0, 10, m] = 1.0
    y = istft(S.with_data(data)).data[0]
    support = np.flatnonzero(np.abs(y) > 1e-12)
    start = m * 64 - S.pad_front
    assert support.min() >= start and support.max() < start + 256


def test_parseval_per_frame(rng):
    n = 512
    x = rng.standard_normal(6000)
    cfg = StftConfig(n)
    S = stft(TimeSignal(x, 8000), cfg)
    win = analysis_window("hann", n)
    padded = np.concatenate([np.zeros(S.pad_front), x, np.zeros(n * 4)])
    weights = np.full(cfg.n_bins, 2.0)
    weights[[0, -1]] = 1.0
    for m in (3, 10, 25):
        frame = padded[m * cfg.hop_size:m * cfg.hop_size + n] * win
        spec_energy = np.sum(weights * np.abs(S.data[0, :, m]) ** 2) / n
        assert spec_energy == pytest.approx(np.sum(frame ** 2), rel=1e-8)


def test_dc_and_nyquist_imaginary_parts_ignored(rng):
    cfg = StftConfig(256, sample_rate=8000)
    S = stft(TimeSignal(rng.standard_normal(3000), 8000), cfg)
    ref = istft(S).data
    noisy = S.data.copy()
    noisy[:, 0] += 1j
    noisy[:, -1] -= 2j
    assert np.allclose(istft(S.with_data(noisy)).data, ref)


def test_sample_rate_mismatch():
    with pytest.raises(ConfigError):
        stft(TimeSignal(np.zeros(100), 8000), StftConfig(64, sample_rate=16000))
    with pytest.raises(DataError):
        stft(TimeSignal(np.zeros((1, 0)), 8000), StftConfig(64))


@given(st.integers(1, 4000), st.sampled_from([64, 256, 512]), st.integers(0, 2 ** 32 - 1))
def test_round_trip_property(n, fft, seed):
    x = np.random.default_rng(seed).standard_normal((1, n))
    y = istft(stft(TimeSignal(x, 8000), StftConfig(fft))).data
    assert y.shape == x.shape
    assert np.max(np.abs(y - x)) <= 1e-9 * max(1.0, np.max(np.abs(x)))


@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2 ** 32 - 1))
def test_linearity_property(a, b, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, 1500))
    cfg = StftConfig(128)
    lhs = stft(TimeSignal(a * x + b * y, 8000), cfg).data
    rhs = a * stft(TimeSignal(x, 8000), cfg).data + b * stft(TimeSignal(y, 8000), cfg).data
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * max(1.0, np.max(np.abs(rhs)))
