"""Audio I/O and basic signal utilities.

All buffers are mono float arrays with an explicit sample rate. Files are
RIFF/WAVE, either 16-bit integer PCM or 32-bit IEEE float; everything else
is rejected. The pipeline normalizes to 16 kHz mono float.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from math import gcd

import numpy as np
from scipy.signal import resample_poly

from .errors import EmptyBuffer, MissingFile, UnsupportedFormat

PIPELINE_RATE_HZ = 16000


@dataclass(frozen=True)
class AudioBuffer:
    """Immutable mono audio: samples (float, nominally [-1, 1]) + rate."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("AudioBuffer samples must be 1-D (mono)")
        if samples.size and not np.all(np.isfinite(samples)):
            raise ValueError("AudioBuffer samples must be finite")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_IEEE_FLOAT = 3
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


def _parse_wav(data: bytes, path: str):
    """Return (format_tag, channels, rate, bits, raw_frames) from RIFF bytes."""
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise UnsupportedFormat(f"{path}: not a RIFF/WAVE file")
    fmt = None
    frames = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise UnsupportedFormat(f"{path}: truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            frames = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned
    if fmt is None or frames is None:
        raise UnsupportedFormat(f"{path}: missing fmt or data chunk")
    format_tag, channels, rate, _byte_rate, _block_align, bits = fmt
    if format_tag == _WAVE_FORMAT_EXTENSIBLE:
        # sub-format GUID starts with the real format tag
        raise UnsupportedFormat(f"{path}: WAVE_FORMAT_EXTENSIBLE not supported")
    return format_tag, channels, rate, bits, frames


def load_audio(path: str | os.PathLike) -> AudioBuffer:
    """Load a WAV file as a mono buffer.

    Multi-channel input is averaged across channels. 16-bit PCM is scaled
    to [-1, 1] by dividing by 32768; float32 is taken as-is.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise MissingFile(f"no such audio file: {path}")
    with open(path, "rb") as f:
        data = f.read()
    format_tag, channels, rate, bits, frames = _parse_wav(data, path)
    if format_tag == _WAVE_FORMAT_PCM and bits == 16:
        raw = np.frombuffer(frames, dtype="<i2")
        samples = raw.astype(np.float64) / 32768.0
    elif format_tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        samples = np.frombuffer(frames, dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedFormat(
            f"{path}: unsupported WAV encoding (format {format_tag}, {bits}-bit)"
        )
    if channels < 1:
        raise UnsupportedFormat(f"{path}: zero channels")
    if channels > 1:
        usable = (len(samples) // channels) * channels
        samples = samples[:usable].reshape(-1, channels).mean(axis=1)
    return AudioBuffer(samples, int(rate))


def write_wav(buf: AudioBuffer, path: str | os.PathLike, pcm16: bool = False) -> None:
    """Write a buffer as 32-bit float WAV (default) or 16-bit PCM."""
    path = os.fspath(path)
    if pcm16:
        payload = np.clip(np.round(buf.samples * 32768.0), -32768, 32767).astype("<i2").tobytes()
        format_tag, bits = _WAVE_FORMAT_PCM, 16
    else:
        payload = buf.samples.astype("<f4").tobytes()
        format_tag, bits = _WAVE_FORMAT_IEEE_FLOAT, 32
    block_align = bits // 8
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, format_tag, 1, buf.sample_rate_hz,
        buf.sample_rate_hz * block_align, block_align, bits,
        b"data", len(payload),
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


def wav_duration_s(path: str | os.PathLike) -> float:
    """Read duration from a WAV header without decoding samples."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise MissingFile(f"no such audio file: {path}")
    with open(path, "rb") as f:
        data = f.read()
    _tag, channels, rate, bits, frames = _parse_wav(data, path)
    frame_bytes = channels * (bits // 8)
    if frame_bytes == 0 or rate == 0:
        raise UnsupportedFormat(f"{path}: degenerate format header")
    return len(frames) / frame_bytes / rate


def resample(buf: AudioBuffer, target_hz: int, kaiser_beta: float = 14.0) -> AudioBuffer:
    """Band-limited resampling (polyphase windowed-sinc, Kaiser window)."""
    if target_hz <= 0:
        raise ValueError(f"target_hz must be positive, got {target_hz}")
    if target_hz == buf.sample_rate_hz:
        return buf
    g = gcd(target_hz, buf.sample_rate_hz)
    up, down = target_hz // g, buf.sample_rate_hz // g
    out = resample_poly(buf.samples, up, down, window=("kaiser", kaiser_beta))
    return AudioBuffer(out, target_hz)


def rms_power(buf: AudioBuffer) -> float:
    """Root-mean-square amplitude of the buffer."""
    if len(buf) == 0:
        raise EmptyBuffer("rms_power of empty buffer")
    return float(np.sqrt(np.mean(np.square(buf.samples))))
