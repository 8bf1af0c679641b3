import struct

import numpy as np
import pytest
from scipy.io import wavfile

from fdbss.exceptions import DataError, WavFormatError
from fdbss.signal_core import TimeSignal
from fdbss.wavio import load_wav, save_wav


def test_float_round_trip_is_exact(tmp_path, rng):
    data = rng.uniform(-1, 1, (3, 1000)).astype(np.float32).astype(np.float64)
    save_wav(TimeSignal(data, 16000), tmp_path / "x.wav")
    back = load_wav(tmp_path / "x.wav")
    assert back.sample_rate == 16000
    assert np.array_equal(back.data, data)


def test_pcm16_scaling(tmp_path):
    pcm = np.array([[32767, -32768, 0, 1]], dtype=np.int16)
    wavfile.write(tmp_path / "p.wav", 8000, pcm.T)
    back = load_wav(tmp_path / "p.wav")
    assert back.data[0].tolist() == [32767 / 32768, -1.0, 0.0, 1 / 32768]


def test_mono(tmp_path):
    wavfile.write(tmp_path / "m.wav", 8000, np.zeros(10, dtype=np.float32))
    assert load_wav(tmp_path / "m.wav").data.shape == (1, 10)


def test_truncated_data_names_chunk(tmp_path):
    save_wav(TimeSignal(np.zeros((1, 100)), 16000), tmp_path / "t.wav")
    raw = (tmp_path / "t.wav").read_bytes()
    (tmp_path / "t.wav").write_bytes(raw[:-40])
    with pytest.raises(WavFormatError) as e:
        load_wav(tmp_path / "t.wav")
    assert e.value.chunk == "data" and "data" in str(e.value)
    (tmp_path / "t.wav").write_bytes(raw[:20])
    with pytest.raises(WavFormatError) as e:
        load_wav(tmp_path / "t.wav")
    assert e.value.chunk == "fmt"
    (tmp_path / "t.wav").write_bytes(b"RIFX" + raw[4:])
    with pytest.raises(WavFormatError) as e:
        load_wav(tmp_path / "t.wav")
    assert e.value.chunk == "RIFF"


def test_unsupported_codec(tmp_path):
    wavfile.write(tmp_path / "i.wav", 8000, np.zeros(10, dtype=np.int32))
    with pytest.raises(WavFormatError, match="unsupported codec"):
        load_wav(tmp_path / "i.wav")
    # 8-bit PCM written by hand
    body = bytes(16)
    fmt = struct.pack("<HHIIHH", 1, 1, 8000, 8000, 1, 8)
    raw = (b"RIFF" + struct.pack("<I", 4 + 8 + 16 + 8 + 16) + b"WAVE" + b"fmt "
           + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", 16) + body)
    (tmp_path / "u8.wav").write_bytes(raw)
    with pytest.raises(WavFormatError):
        load_wav(tmp_path / "u8.wav")


def test_missing_file_and_bad_rate(tmp_path):
    with pytest.raises(DataError):
        load_wav(tmp_path / "nope.wav")
    with pytest.raises(DataError):
        save_wav(TimeSignal(np.zeros((1, 4)), 44100.5), tmp_path / "r.wav")
