"""WAV reading and writing (PCM 16-bit or IEEE float 32-bit)."""

from __future__ import annotations

import struct
import warnings
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .exceptions import DataError, WavFormatError
from .signal_core import TimeSignal

__all__ = ["load_wav", "save_wav"]

_PCM, _FLOAT, _EXTENSIBLE = 1, 3, 0xFFFE


def _scan_chunks(raw: bytes, path) -> dict:
    """Validate the RIFF layout; returns the parsed ``fmt`` fields.

    Raises :class:`WavFormatError` naming the chunk that is missing or cut.
    """
    if len(raw) < 12:
        raise WavFormatError(f"{path}: truncated before the RIFF header", chunk="RIFF")
    if raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: not a RIFF/WAVE file", chunk="RIFF")
    pos, fmt, have_data = 12, None, False
    while pos + 8 <= len(raw):
        cid = raw[pos:pos + 4]
        size = struct.unpack("<I", raw[pos + 4:pos + 8])[0]
        body = raw[pos + 8:pos + 8 + size]
        name = cid.decode("ascii", "replace").strip()
        if cid == b"fmt ":
            if len(body) < 16:
                raise WavFormatError(f"{path}: truncated 'fmt ' chunk", chunk="fmt")
            tag, ch, rate, _, _, bits = struct.unpack("<HHIIHH", body[:16])
            if tag == _EXTENSIBLE and len(body) >= 26:
                tag = struct.unpack("<H", body[24:26])[0]
            fmt = {"tag": tag, "channels": ch, "rate": rate, "bits": bits}
        elif cid == b"data":
            if fmt is None:
                raise WavFormatError(f"{path}: 'data' chunk before 'fmt '", chunk="fmt")
            if len(body) < size:
                raise WavFormatError(
                    f"{path}: 'data' chunk truncated ({len(body)} of {size} bytes)", chunk="data")
            have_data = True
        elif len(body) < size:
            raise WavFormatError(f"{path}: chunk {name!r} truncated", chunk=name)
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise WavFormatError(f"{path}: missing 'fmt ' chunk", chunk="fmt")
    if not have_data:
        raise WavFormatError(f"{path}: missing 'data' chunk", chunk="data")
    return fmt


def load_wav(path) -> TimeSignal:
    """Read a WAV file as ``(channels, samples)`` floats.

    16-bit PCM is scaled by ``1/32768`` (so 32767 maps to 32767/32768);
    32-bit float samples are returned unchanged.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    fmt = _scan_chunks(raw, path)
    if not ((fmt["tag"] == _PCM and fmt["bits"] == 16) or (fmt["tag"] == _FLOAT and fmt["bits"] == 32)):
        raise WavFormatError(
            f"{path}: unsupported codec (format tag {fmt['tag']}, {fmt['bits']} bits); "
            "expected 16-bit PCM or 32-bit float", chunk="fmt")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", wavfile.WavFileWarning)
        rate, data = wavfile.read(path)
    data = np.atleast_2d(data.T) if data.ndim > 1 else data[np.newaxis]
    if data.dtype == np.int16:
        out = data.astype(np.float64) / 32768.0
    else:
        out = data.astype(np.float64)
    return TimeSignal(out, float(rate))


def save_wav(sig: TimeSignal, path) -> None:
    """Write ``sig`` as 32-bit IEEE float."""
    if sig.sample_rate is None or sig.sample_rate <= 0 or sig.sample_rate != int(sig.sample_rate):
        raise DataError("saving a WAV needs a positive integer sample rate")
    path = Path(path)
    try:
        wavfile.write(path, int(sig.sample_rate), np.ascontiguousarray(sig.data.T.astype(np.float32)))
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc
