"""16-bit mono PCM WAV reading and writing.

Only RIFF/WAVE with a PCM ``fmt `` chunk, one channel and 16 bits per sample
is accepted. Anything else raises :class:`UnsupportedFormatError` naming the
field that made the file unacceptable.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PCM_SCALE = 32768.0
WAVE_FORMAT_PCM = 1
WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class WavFormatError(ValueError):
    """Malformed RIFF/WAVE structure."""


class UnsupportedFormatError(WavFormatError):
    """Well-formed WAV whose encoding is outside 16-bit mono PCM."""

    def __init__(self, field: str, value, expected):
        self.field = field
        self.value = value
        self.expected = expected
        super().__init__(f"unsupported {field}: got {value!r}, expected {expected!r}")


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {samples.shape}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def _parse_fmt(body: bytes) -> tuple[int, int, int, int]:
    if len(body) < 16:
        raise WavFormatError(f"fmt chunk too short ({len(body)} bytes)")
    fmt_tag, channels, rate, _byte_rate, _align, bits = struct.unpack("<HHIIHH", body[:16])
    if fmt_tag == WAVE_FORMAT_EXTENSIBLE and len(body) >= 26:
        # sub-format GUID starts at byte 24; its first two bytes carry the real tag
        fmt_tag = struct.unpack("<H", body[24:26])[0]
    return fmt_tag, channels, rate, bits


def decode_wav(data: bytes) -> Waveform:
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError("missing RIFF/WAVE header")
    pos = 12
    fmt = None
    pcm = None
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        size = struct.unpack("<I", data[pos + 4:pos + 8])[0]
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise WavFormatError(f"chunk {chunk_id!r} truncated: {len(body)} of {size} bytes")
        if chunk_id == b"fmt ":
            fmt = _parse_fmt(body)
        elif chunk_id == b"data":
            pcm = body
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise WavFormatError("no fmt chunk")
    if pcm is None:
        raise WavFormatError("no data chunk")

    fmt_tag, channels, rate, bits = fmt
    if fmt_tag != WAVE_FORMAT_PCM:
        raise UnsupportedFormatError("format tag", fmt_tag, WAVE_FORMAT_PCM)
    if channels != 1:
        raise UnsupportedFormatError("channel count", channels, 1)
    if bits != 16:
        raise UnsupportedFormatError("bits per sample", bits, 16)
    if rate == 0:
        raise WavFormatError("sample rate is zero")
    n = len(pcm) // 2
    ints = np.frombuffer(pcm[:2 * n], dtype="<i2")
    return Waveform(ints.astype(np.float64) / PCM_SCALE, rate)


def encode_wav(w: Waveform) -> bytes:
    x = np.asarray(w.samples, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot encode non-finite samples")
    q = np.rint(np.clip(x, -1.0, 1.0) * PCM_SCALE)
    q = np.clip(q, -32768, 32767).astype("<i2")
    pcm = q.tobytes()
    fmt = struct.pack("<HHIIHH", WAVE_FORMAT_PCM, 1, w.sample_rate, 2 * w.sample_rate, 2, 16)
    return b"".join([
        b"RIFF", struct.pack("<I", 4 + 8 + len(fmt) + 8 + len(pcm)), b"WAVE",
        b"fmt ", struct.pack("<I", len(fmt)), fmt,
        b"data", struct.pack("<I", len(pcm)), pcm,
    ])


def read_wav(path) -> Waveform:
    path = Path(path)
    data = path.read_bytes()
    try:
        return decode_wav(data)
    except WavFormatError as exc:
        exc.args = (f"{path}: {exc.args[0]}",)
        raise


def write_wav(w: Waveform, path) -> None:
    """Write ``w`` as 16-bit mono PCM.

    Samples are clamped to [-1, 1) and rounded to the nearest code, so a
    round trip through :func:`read_wav` is off by at most 1/32768.
    """
    path = Path(path)
    data = encode_wav(w)
    try:
        path.write_bytes(data)
    except OSError as exc:
        raise OSError(exc.errno, f"writing {path}: {exc.strerror}") from exc


def validate_training_format(w: Waveform, expected_rate: int, expected_len: int) -> None:
    if w.sample_rate != expected_rate or len(w) != expected_len:
        raise ValidationError(
            f"expected {expected_len} samples @ {expected_rate} Hz, "
            f"got {len(w)} samples @ {w.sample_rate} Hz"
        )
